"""Command-line entry points: run, validate, sweep.

Exit codes: 0 success, 1 validation failures, 2 configuration errors,
3 runtime invariant breach, 4 reference-solver non-convergence.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import os
import sys

from .config import ConfigError, ExperimentConfig, apply_seed_override, load_config, parse_config_dict
from .engine import EngineError
from .metrics import ReferenceError
from .runner import run_experiment
from .tracking import TrackingError
from .validate import run_all_checks

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_REFERENCE = 4

OUT_DIR_ENV = "ADOPT_OUT_DIR"


def _default_out_dir(config_path: str) -> str:
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return stem + "_out"


def _resolve_out_dir(args) -> str:
    if args.out_dir:
        return args.out_dir
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return env
    return _default_out_dir(args.config)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = apply_seed_override(cfg, args.seed_override)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_experiment(cfg, _resolve_out_dir(args), quiet=args.quiet)
    except (EngineError, TrackingError) as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ReferenceError as exc:
        print(f"reference solver failed: {exc}", file=sys.stderr)
        return EXIT_REFERENCE
    return EXIT_OK


def cmd_validate(args) -> int:
    report = run_all_checks()
    text = json.dumps(report, sort_keys=True, indent=2)
    if not args.quiet:
        print(text)
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    failing = sorted(name for name, r in report.items() if not r["passed"])
    if failing:
        print(f"FAILED checks: {', '.join(failing)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _parse_axis(spec_text: str):
    if "=" not in spec_text:
        raise ConfigError(f"axis {spec_text!r} must look like block.key=v1,v2,...")
    path, _, values_text = spec_text.partition("=")
    path = path.strip()
    if "." not in path:
        raise ConfigError(f"axis path {path!r} must be block.key")
    values = []
    raw_items = [v for v in values_text.split(",") if v.strip() != ""]
    if not raw_items:
        raise ConfigError(f"axis {path!r} has no values")
    for item in raw_items:
        item = item.strip()
        for cast in (int, float):
            try:
                values.append(cast(item))
                break
            except ValueError:
                continue
        else:
            if item in ("true", "false"):
                values.append(item == "true")
            else:
                values.append(item)
    return path, values


def _set_path(tree: dict, path: str, value) -> None:
    block, _, key = path.partition(".")
    if block not in tree or not isinstance(tree[block], dict):
        raise ConfigError(f"axis path {path!r}: no block [{block}]")
    tree[block][key] = value


def cmd_sweep(args) -> int:
    try:
        cfg = _load(args)
        if not args.axis:
            raise ConfigError("sweep needs at least one --axis block.key=v1,v2,...")
        axes = [_parse_axis(a) for a in args.axis]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = _resolve_out_dir(args)
    os.makedirs(out_root, exist_ok=True)
    axis_paths = [path for path, _ in axes]
    base_echo = cfg.echo()
    root_seed = args.root_seed
    if root_seed is None:
        root_seed = (base_echo["algorithm"].get("schedule_seed", 0)
                     if base_echo["algorithm"]["mode"] == "async" else 0)

    rows = []
    any_ok = False
    for idx, combo in enumerate(itertools.product(*(vals for _, vals in axes))):
        tree = copy.deepcopy(base_echo)
        for (path, _), value in zip(axes, combo):
            _set_path(tree, path, value)
        if (tree["algorithm"]["mode"] == "async"
                and "algorithm.schedule_seed" not in axis_paths):
            tree["algorithm"]["schedule_seed"] = root_seed + idx
        point_dir = os.path.join(out_root, f"point_{idx:03d}")
        row = {"point": idx, "out_dir": point_dir,
               **{p: v for (p, _), v in zip(axes, combo)}}
        try:
            point_cfg = parse_config_dict(tree)
            payload = run_experiment(point_cfg, point_dir, quiet=True)
            row["status"] = "ok"
            final = payload["run"].get("final", {})
            row["stop_reason"] = payload["run"]["stop_reason"]
            row["U_gap"] = final.get("U_gap")
            row["merit"] = final.get("merit")
            fit = payload.get("rate_fit", {})
            row["rate"] = fit.get("rate")
            row["r_squared"] = fit.get("r_squared")
            any_ok = True
        except ConfigError as exc:
            row["status"] = f"config_error: {exc}"
        except (EngineError, TrackingError) as exc:
            row["status"] = f"invariant_breach: {exc}"
        except ReferenceError as exc:
            row["status"] = f"reference_failed: {exc}"
        rows.append(row)
        if not args.quiet:
            print(f"point {idx:03d}: {row['status']}")

    columns = ["point", "status", "stop_reason", "U_gap", "merit", "rate",
               "r_squared", "out_dir"]
    columns[1:1] = axis_paths
    agg_path = os.path.join(out_root, "sweep.csv")
    with open(agg_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join("" if row.get(c) is None else str(row.get(c))
                              for c in columns) + "\n")
    if not args.quiet:
        print(f"aggregate: {agg_path}")
    return EXIT_OK if any_ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adopt",
        description="Asynchronous decentralized optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out-dir", default=None)
    p_run.add_argument("--seed-override", type=int, default=None,
                       help="derive problem/graph/schedule seeds from this root")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="run the invariant/property suite")
    p_val.add_argument("--out", default=None, help="also write the JSON report here")
    p_val.add_argument("--quiet", action="store_true")
    p_val.set_defaults(func=cmd_validate)

    p_sweep = sub.add_parser("sweep", help="cartesian sweep over config axes")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", action="append", default=[],
                         help="block.key=v1,v2,... (repeatable)")
    p_sweep.add_argument("--out-dir", default=None)
    p_sweep.add_argument("--seed-override", type=int, default=None)
    p_sweep.add_argument("--root-seed", type=int, default=None,
                         help="base for per-point schedule seeds")
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
