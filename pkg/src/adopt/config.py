"""Strict TOML experiment configuration.

Unknown keys anywhere in the file are rejected so that a typo in a
hyperparameter can never silently fall back to a default.  The parsed
config carries the fully resolved value set; echoing it in the run summary
is sufficient to reproduce the run bit-exactly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_NUMERIC = (int, float)

# block -> key -> (types, default); REQUIRED means no default
REQUIRED = object()

_PROBLEM_COMMON = {
    "family": (str, REQUIRED),
    "seed": (int, 0),
    "n": (int, None),
    "agents": (int, None),
    "lam": (_NUMERIC, None),
    "density": (_NUMERIC, None),
}
_PROBLEM_BY_FAMILY = {
    "lasso": {"rows_per_agent": (int, None), "omega": (_NUMERIC, None),
              "noise_sd": (_NUMERIC, None)},
    "logistic": {"samples_per_agent": (int, None)},
    "mestimator": {"samples_per_agent": (int, None), "alpha": (_NUMERIC, None),
                   "radius": (_NUMERIC, None), "noise_sd": (_NUMERIC, None)},
}

_GRAPH_COMMON = {
    "kind": (str, REQUIRED),
    "seed": (int, 0),
}
_GRAPH_BY_KIND = {
    "directed_ring_plus": {"extra_out": (int, REQUIRED)},
    "erdos_renyi": {"p": (_NUMERIC, REQUIRED), "resample_budget": (int, 1000)},
}

_ALGORITHM_COMMON = {
    "mode": (str, REQUIRED),
    "surrogate": (str, "linearized"),
    "strong_convexity": (_NUMERIC, REQUIRED),
    "step_size": (_NUMERIC, REQUIRED),
    "trace_every": (int, 1),
    "stop_quantity": (str, None),
    "stop_threshold": (_NUMERIC, None),
}
_ALGORITHM_BY_MODE = {
    "async": {"p_min": (_NUMERIC, 5.0), "p_max": (_NUMERIC, 15.0),
              "d_tv": (_NUMERIC, 30.0), "schedule_seed": (int, 0),
              "horizon_iters": (int, REQUIRED),
              "horizon_time_ms": (_NUMERIC, None),
              "audit_every": (int, 1)},
    "sync": {"iterations": (int, REQUIRED)},
}

_METRICS_SCHEMA = {
    "compute_reference": (bool, True),
    "reference_tolerance": (_NUMERIC, 1e-12),
    "reference_max_iters": (int, 200_000),
    "deltas": (list, ()),
    "rate_quantity": (str, "U_gap"),
    "rate_range": (list, None),
    "rate_window": (list, None),
}

_OUTPUT_SCHEMA = {
    "trace": (str, "trace.csv"),
    "summary": (str, "summary.json"),
}


def _apply_schema(block_name: str, raw: dict, schema: dict) -> dict:
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(
            f"[{block_name}] has unknown key(s): {', '.join(sorted(unknown))}")
    out = {}
    for key, (types, default) in schema.items():
        if key in raw and raw[key] is not None:
            value = raw[key]
            if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
                raise ConfigError(
                    f"[{block_name}].{key} has wrong type {type(value).__name__}")
            out[key] = value
        elif default is REQUIRED:
            raise ConfigError(f"[{block_name}].{key} is required")
        else:
            out[key] = default
    return out


@dataclass
class ExperimentConfig:
    problem: dict
    graph: dict
    algorithm: dict
    metrics: dict
    output: dict

    def echo(self) -> dict:
        """Fully resolved configuration, sufficient to reproduce the run."""
        return {
            "problem": copy.deepcopy(self.problem),
            "graph": copy.deepcopy(self.graph),
            "algorithm": copy.deepcopy(self.algorithm),
            "metrics": copy.deepcopy(self.metrics),
            "output": copy.deepcopy(self.output),
        }


def _validate_ranges(cfg: ExperimentConfig) -> None:
    alg = cfg.algorithm
    if not (0.0 <= alg["step_size"] <= 1.0):
        raise ConfigError("[algorithm].step_size must be in [0, 1]")
    if alg["strong_convexity"] <= 0:
        raise ConfigError("[algorithm].strong_convexity must be > 0")
    if alg["surrogate"] not in ("linearized", "diagonal_hessian"):
        raise ConfigError(f"unknown surrogate {alg['surrogate']!r}")
    if alg["trace_every"] < 1:
        raise ConfigError("[algorithm].trace_every must be >= 1")
    if (alg["stop_quantity"] is None) != (alg["stop_threshold"] is None):
        raise ConfigError("stop_quantity and stop_threshold must be set together")
    if alg["mode"] == "async":
        if not (0 < alg["p_min"] <= alg["p_max"]):
            raise ConfigError("need 0 < p_min <= p_max")
        if alg["d_tv"] < 0:
            raise ConfigError("d_tv must be >= 0 (0 means instantaneous)")
        if alg["horizon_iters"] < 1:
            raise ConfigError("horizon_iters must be >= 1")
        if alg["audit_every"] < 0:
            raise ConfigError("audit_every must be >= 0 (0 disables)")
    else:
        if alg["iterations"] < 1:
            raise ConfigError("iterations must be >= 1")
    mets = cfg.metrics
    for key in ("rate_range", "rate_window"):
        if mets[key] is not None and len(mets[key]) != 2:
            raise ConfigError(f"[metrics].{key} must have exactly 2 entries")
    if mets["deltas"] and any(not isinstance(d, _NUMERIC) for d in mets["deltas"]):
        raise ConfigError("[metrics].deltas must be numeric")


def parse_config_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - {"problem", "graph", "algorithm", "metrics", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level block(s): {', '.join(sorted(unknown))}")
    for block in ("problem", "graph", "algorithm"):
        if block not in raw:
            raise ConfigError(f"missing required block [{block}]")

    fam_raw = raw["problem"]
    family = fam_raw.get("family")
    if family not in _PROBLEM_BY_FAMILY:
        raise ConfigError(f"[problem].family must be one of "
                          f"{sorted(_PROBLEM_BY_FAMILY)}, got {family!r}")
    problem = _apply_schema("problem", fam_raw,
                            {**_PROBLEM_COMMON, **_PROBLEM_BY_FAMILY[family]})

    graph_raw = raw["graph"]
    kind = graph_raw.get("kind")
    if kind not in _GRAPH_BY_KIND:
        raise ConfigError(f"[graph].kind must be one of "
                          f"{sorted(_GRAPH_BY_KIND)}, got {kind!r}")
    graph = _apply_schema("graph", graph_raw,
                          {**_GRAPH_COMMON, **_GRAPH_BY_KIND[kind]})

    alg_raw = raw["algorithm"]
    mode = alg_raw.get("mode")
    if mode not in _ALGORITHM_BY_MODE:
        raise ConfigError(f"[algorithm].mode must be 'async' or 'sync', got {mode!r}")
    algorithm = _apply_schema("algorithm", alg_raw,
                              {**_ALGORITHM_COMMON, **_ALGORITHM_BY_MODE[mode]})

    metrics = _apply_schema("metrics", raw.get("metrics", {}), _METRICS_SCHEMA)
    output = _apply_schema("output", raw.get("output", {}), _OUTPUT_SCHEMA)

    cfg = ExperimentConfig(problem, graph, algorithm, metrics, output)
    _validate_ranges(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return parse_config_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def apply_seed_override(cfg: ExperimentConfig, root_seed: int) -> ExperimentConfig:
    """Derive all seeds from one root: problem, graph, and schedule."""
    cfg = ExperimentConfig(**cfg.echo())
    cfg.problem["seed"] = root_seed + 1
    cfg.graph["seed"] = root_seed + 2
    if cfg.algorithm["mode"] == "async":
        cfg.algorithm["schedule_seed"] = root_seed + 3
    return cfg
