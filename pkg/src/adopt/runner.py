"""Config-driven experiment pipeline: build, run, fit, write artifacts."""

from __future__ import annotations

import json
import os
from dataclasses import asdict

from . import kernels, metrics
from .config import ExperimentConfig
from .engine import RunResult, Schedule, StopRule, run_async, run_sync
from .localsolve import SurrogateSpec
from .netgraph import gen_directed_ring_plus, gen_erdos_renyi
from .objective import make_lasso, make_logistic, make_mestimator

__version__ = "0.1.0"


def build_problem(cfg: ExperimentConfig):
    p = cfg.problem
    family = p["family"]
    common = {"seed": p["seed"]}
    if p["n"] is not None:
        common["n"] = p["n"]
    if p["agents"] is not None:
        common["num_agents"] = p["agents"]
    if p["lam"] is not None:
        common["lam"] = p["lam"]
    if p["density"] is not None:
        common["density"] = p["density"]
    extra_keys = {
        "lasso": ("rows_per_agent", "omega", "noise_sd"),
        "logistic": ("samples_per_agent",),
        "mestimator": ("samples_per_agent", "alpha", "radius", "noise_sd"),
    }[family]
    for key in extra_keys:
        if p[key] is not None:
            common[key] = p[key]
    maker = {"lasso": make_lasso, "logistic": make_logistic,
             "mestimator": make_mestimator}[family]
    return maker(**common)


def build_topology(cfg: ExperimentConfig, num_agents: int):
    g = cfg.graph
    if g["kind"] == "directed_ring_plus":
        return gen_directed_ring_plus(num_agents, g["extra_out"], g["seed"])
    return gen_erdos_renyi(num_agents, g["p"], g["seed"], g["resample_budget"])


def build_surrogate(cfg: ExperimentConfig) -> SurrogateSpec:
    return SurrogateSpec(cfg.algorithm["surrogate"], cfg.algorithm["strong_convexity"])


def execute(cfg: ExperimentConfig):
    """Run the configured experiment; returns (RunResult, reference|None)."""
    problem, _ = build_problem(cfg)
    topology = build_topology(cfg, problem.num_agents)
    spec = build_surrogate(cfg)
    alg = cfg.algorithm

    reference = None
    if cfg.metrics["compute_reference"]:
        reference = metrics.solve_reference(
            problem,
            tolerance=cfg.metrics["reference_tolerance"],
            max_iters=cfg.metrics["reference_max_iters"],
        )
    u_star = reference.U_star if reference is not None else None

    stop = None
    if alg["stop_quantity"] is not None:
        stop = StopRule(alg["stop_quantity"], alg["stop_threshold"])

    if alg["mode"] == "async":
        schedule = Schedule(
            p_min=float(alg["p_min"]), p_max=float(alg["p_max"]),
            d_tv=float(alg["d_tv"]), seed=alg["schedule_seed"],
            horizon_iters=alg["horizon_iters"],
            horizon_time_ms=alg["horizon_time_ms"],
        )
        result = run_async(problem, topology, spec, float(alg["step_size"]),
                           schedule, stop=stop, u_star=u_star,
                           trace_every=alg["trace_every"],
                           audit_every=alg["audit_every"])
    else:
        result = run_sync(problem, topology, spec, float(alg["step_size"]),
                          alg["iterations"], stop=stop, u_star=u_star,
                          trace_every=alg["trace_every"])
    return result, reference, topology


def analyze(cfg: ExperimentConfig, result: RunResult, reference, topology) -> dict:
    """Assemble the summary payload: config echo, metrics, rate fits."""
    mets = cfg.metrics
    rate_fit: dict
    try:
        kwargs = {}
        if mets["rate_window"] is not None:
            kwargs["window"] = tuple(int(v) for v in mets["rate_window"])
        elif mets["rate_range"] is not None:
            kwargs["value_range"] = tuple(float(v) for v in mets["rate_range"])
        fit = metrics.fit_rate(result.trace, mets["rate_quantity"], **kwargs)
        rate_fit = {"quantity": mets["rate_quantity"], **asdict(fit)}
        rate_fit["window"] = list(rate_fit["window"])
    except metrics.RateFitError as exc:
        rate_fit = {"quantity": mets["rate_quantity"], "error": str(exc)}

    thresholds = None
    if mets["deltas"]:
        thresholds = {
            f"{d:g}": metrics.time_to_threshold(result.trace, "merit", [d])[float(d)]
            for d in mets["deltas"]
        }

    ref_payload = None
    if reference is not None:
        ref_payload = {
            "U_star": float(reference.U_star),
            "kkt_residual": float(reference.kkt_residual),
            "iterations": int(reference.iterations),
            "certified": bool(reference.certified),
        }

    return {
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg.echo(),
        "graph_meta": dict(topology.meta),
        "reference": ref_payload,
        "run": result.summary,
        "rate_fit": rate_fit,
        "time_to_threshold": thresholds,
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str, quiet: bool = False) -> dict:
    """Full pipeline; writes the trace CSV and summary JSON into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    result, reference, topology = execute(cfg)
    payload = analyze(cfg, result, reference, topology)
    trace_path = os.path.join(out_dir, cfg.output["trace"])
    summary_path = os.path.join(out_dir, cfg.output["summary"])
    result.write_trace(trace_path)
    payload["trace_path"] = trace_path
    with open(summary_path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if not quiet:
        final = result.summary.get("final", {})
        print(f"run complete: {result.summary['global_iters']} iterations, "
              f"stop={result.summary['stop_reason']}")
        if final:
            print(f"  U_gap={final['U_gap']:.6g}  merit={final['merit']:.6g}  "
                  f"consensus={final['consensus_err']:.6g}")
        print(f"  trace:   {trace_path}")
        print(f"  summary: {summary_path}")
    return payload
