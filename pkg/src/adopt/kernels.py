"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

Every kernel exists in two implementations with identical signatures.  The
active backend is chosen at import time: numba when it is importable and the
``ADOPT_NUMBA`` environment variable is not set to ``0``/``false``/``off``,
pure numpy otherwise.  ``get_backend`` exposes both for benchmarking.

Numerical note: the two backends may differ in summation order, so results
agree to rounding (~1e-15 relative) but are not guaranteed bit-identical
across backends.  Within one backend all kernels are deterministic.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_KERNEL_NAMES = [
    "grad_quadratic",
    "grad_logistic",
    "grad_welsch",
    "soft_threshold",
    "coordinate_prox_l1",
    "consensus_mix",
    "track_update",
    "mass_audit",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _np_grad_quadratic(M, b, x):
    return 2.0 * (M.T @ (M @ x - b))


def _np_grad_logistic(feats, labels, x):
    m = labels * (feats @ x)
    # sigmoid(-m), computed without overflow for large |m|
    e = np.exp(-np.abs(m))
    sig = np.where(m >= 0.0, e / (1.0 + e), 1.0 / (1.0 + e))
    return -(feats.T @ (labels * sig))


def _np_grad_welsch(feats, targets, x, alpha, scale):
    r = feats @ x - targets
    w = r * np.exp(-0.5 * alpha * r * r)
    return scale * (feats.T @ w)


def _np_soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _np_coordinate_prox_l1(x_center, linear, qdiag, lam):
    # argmin_x  linear.(x - c) + 1/2 (x-c)' diag(q) (x-c) + lam |x|_1
    c = x_center - linear / qdiag
    return _np_soft_threshold(c, lam / qdiag)


def _np_consensus_mix(v_self, w_self, w_in, mail_v, has_mail, in_ids):
    x = w_self * v_self
    live = in_ids[has_mail[in_ids]]
    if live.size:
        x = x + (w_in[live, None] * mail_v[live]).sum(axis=0)
    return x


def _np_track_update(i, Z, phi, Y, in_ids, out_ids, mail_rho, mail_sigma,
                     has_mail, buf_rho, buf_sigma, ledger_rho, ledger_sigma,
                     a_self, a_out, eps):
    live = in_ids[has_mail[in_ids]]
    z_half = Z[i] + eps
    phi_half = phi[i]
    if live.size:
        z_half = z_half + (mail_rho[live] - buf_rho[live]).sum(axis=0)
        phi_half = phi_half + (mail_sigma[live] - buf_sigma[live]).sum()
    Z[i] = a_self * z_half
    phi[i] = a_self * phi_half
    if out_ids.size:
        ledger_rho[out_ids] += a_out[out_ids, None] * z_half
        ledger_sigma[out_ids] += a_out[out_ids] * phi_half
    if live.size:
        buf_rho[live] = mail_rho[live]
        buf_sigma[live] = mail_sigma[live]
    Y[i] = Z[i] / phi[i]
    return phi[i]


def _np_mass_audit(Z, phi, ledger_rho, buf_rho, ledger_sigma, buf_sigma, grads):
    z_err = Z.sum(axis=0) + ledger_rho.sum(axis=0) - buf_rho.sum(axis=0) - grads.sum(axis=0)
    phi_err = phi.sum() + ledger_sigma.sum() - buf_sigma.sum() - float(Z.shape[0])
    return float(np.linalg.norm(z_err)), abs(float(phi_err))


_NUMPY = SimpleNamespace(
    name="numpy",
    grad_quadratic=_np_grad_quadratic,
    grad_logistic=_np_grad_logistic,
    grad_welsch=_np_grad_welsch,
    soft_threshold=_np_soft_threshold,
    coordinate_prox_l1=_np_coordinate_prox_l1,
    consensus_mix=_np_consensus_mix,
    track_update=_np_track_update,
    mass_audit=_np_mass_audit,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_backend():
    from numba import njit

    @njit(cache=True)
    def grad_quadratic(M, b, x):
        r, n = M.shape
        out = np.zeros(n)
        for s in range(r):
            acc = -b[s]
            for j in range(n):
                acc += M[s, j] * x[j]
            acc *= 2.0
            for j in range(n):
                out[j] += acc * M[s, j]
        return out

    @njit(cache=True)
    def grad_logistic(feats, labels, x):
        m_count, n = feats.shape
        out = np.zeros(n)
        for s in range(m_count):
            t = 0.0
            for j in range(n):
                t += feats[s, j] * x[j]
            t *= labels[s]
            if t >= 0.0:
                e = np.exp(-t)
                sig = e / (1.0 + e)
            else:
                sig = 1.0 / (1.0 + np.exp(t))
            c = -labels[s] * sig
            for j in range(n):
                out[j] += c * feats[s, j]
        return out

    @njit(cache=True)
    def grad_welsch(feats, targets, x, alpha, scale):
        m_count, n = feats.shape
        out = np.zeros(n)
        for s in range(m_count):
            r = -targets[s]
            for j in range(n):
                r += feats[s, j] * x[j]
            w = r * np.exp(-0.5 * alpha * r * r)
            for j in range(n):
                out[j] += w * feats[s, j]
        for j in range(n):
            out[j] *= scale
        return out

    @njit(cache=True)
    def soft_threshold(v, t):
        out = np.empty_like(v)
        for j in range(v.shape[0]):
            a = abs(v[j]) - t
            if a <= 0.0:
                out[j] = 0.0
            elif v[j] > 0.0:
                out[j] = a
            else:
                out[j] = -a
        return out

    @njit(cache=True)
    def coordinate_prox_l1(x_center, linear, qdiag, lam):
        n = x_center.shape[0]
        out = np.empty(n)
        for j in range(n):
            c = x_center[j] - linear[j] / qdiag[j]
            t = lam / qdiag[j]
            a = abs(c) - t
            if a <= 0.0:
                out[j] = 0.0
            elif c > 0.0:
                out[j] = a
            else:
                out[j] = -a
        return out

    @njit(cache=True)
    def consensus_mix(v_self, w_self, w_in, mail_v, has_mail, in_ids):
        n = v_self.shape[0]
        x = np.empty(n)
        for j in range(n):
            x[j] = w_self * v_self[j]
        for idx in range(in_ids.shape[0]):
            e = in_ids[idx]
            if has_mail[e]:
                w = w_in[e]
                for j in range(n):
                    x[j] += w * mail_v[e, j]
        return x

    @njit(cache=True)
    def track_update(i, Z, phi, Y, in_ids, out_ids, mail_rho, mail_sigma,
                     has_mail, buf_rho, buf_sigma, ledger_rho, ledger_sigma,
                     a_self, a_out, eps):
        n = Z.shape[1]
        z_half = np.empty(n)
        for j in range(n):
            z_half[j] = Z[i, j] + eps[j]
        phi_half = phi[i]
        for idx in range(in_ids.shape[0]):
            e = in_ids[idx]
            if has_mail[e]:
                for j in range(n):
                    z_half[j] += mail_rho[e, j] - buf_rho[e, j]
                phi_half += mail_sigma[e] - buf_sigma[e]
        for j in range(n):
            Z[i, j] = a_self * z_half[j]
        phi[i] = a_self * phi_half
        for idx in range(out_ids.shape[0]):
            e = out_ids[idx]
            w = a_out[e]
            for j in range(n):
                ledger_rho[e, j] += w * z_half[j]
            ledger_sigma[e] += w * phi_half
        for idx in range(in_ids.shape[0]):
            e = in_ids[idx]
            if has_mail[e]:
                for j in range(n):
                    buf_rho[e, j] = mail_rho[e, j]
                buf_sigma[e] = mail_sigma[e]
        for j in range(n):
            Y[i, j] = Z[i, j] / phi[i]
        return phi[i]

    @njit(cache=True)
    def mass_audit(Z, phi, ledger_rho, buf_rho, ledger_sigma, buf_sigma, grads):
        num_agents, n = Z.shape
        num_edges = ledger_rho.shape[0]
        z_sq = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(num_agents):
                acc += Z[i, j] - grads[i, j]
            for e in range(num_edges):
                acc += ledger_rho[e, j] - buf_rho[e, j]
            z_sq += acc * acc
        p = -float(num_agents)
        for i in range(num_agents):
            p += phi[i]
        for e in range(num_edges):
            p += ledger_sigma[e] - buf_sigma[e]
        return np.sqrt(z_sq), abs(p)

    return SimpleNamespace(
        name="numba",
        grad_quadratic=grad_quadratic,
        grad_logistic=grad_logistic,
        grad_welsch=grad_welsch,
        soft_threshold=soft_threshold,
        coordinate_prox_l1=coordinate_prox_l1,
        consensus_mix=consensus_mix,
        track_update=track_update,
        mass_audit=mass_audit,
    )


def _numba_requested() -> bool:
    flag = os.environ.get("ADOPT_NUMBA", "").strip().lower()
    return flag not in ("0", "false", "off", "no")


_numba_backend = None


def get_backend(name: str) -> SimpleNamespace:
    """Return the kernel namespace for ``name`` ('numpy' or 'numba')."""
    global _numba_backend
    if name == "numpy":
        return _NUMPY
    if name == "numba":
        if _numba_backend is None:
            _numba_backend = _build_numba_backend()
        return _numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def _select_default() -> SimpleNamespace:
    if _numba_requested():
        try:
            return get_backend("numba")
        except ImportError:
            pass
    return _NUMPY


_active = _select_default()

BACKEND = _active.name

grad_quadratic = _active.grad_quadratic
grad_logistic = _active.grad_logistic
grad_welsch = _active.grad_welsch
soft_threshold = _active.soft_threshold
coordinate_prox_l1 = _active.coordinate_prox_l1
consensus_mix = _active.consensus_mix
track_update = _active.track_update
mass_audit = _active.mass_audit
