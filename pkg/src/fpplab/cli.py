"""Command-line driver: one subcommand per experiment kind.

Exit codes: 0 on success, 1 on configuration errors, 2 when a replica
violates an invariant (the message carries the replica seed).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, FPPError, InfeasibleGeometry, ReplicaAssertionError, WitnessError
from .experiments import load_config, make_config, run_experiment, write_report

SUBCOMMANDS = {
    "env": "env",
    "metric": "metric-oracle",
    "shape": "shape",
    "busemann": "busemann-linearity",
    "compete": "coexistence",
    "duality": "duality",
    "ends": "ends",
}

HELP = {
    "env": "generate an environment, check its law and save it",
    "metric": "Dijkstra against exhaustive enumeration, metric axioms",
    "shape": "time-constant grid, hull, symmetry and side counts",
    "busemann": "Busemann approximants, fitted gradients and linearity events",
    "compete": "k-type competition and coexistence proxy",
    "duality": "shape sides -> placement -> coexistence frequency",
    "ends": "ends of the geodesic tree at radii (r, R)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpplab", description="First-passage percolation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="YAML file of experiment keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--box-radius", type=int, dest="box_radius")
        p.add_argument("--out", default=f"fpplab-{name}", help="output directory")
        if name == "shape":
            p.add_argument("--directions", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--angle-tol", type=float, dest="angle_tol")
        if name in ("compete", "duality"):
            p.add_argument("--k", type=int)
            p.add_argument("--proxy-mode", choices=("boundary", "volume"), dest="proxy_mode")
            p.add_argument("--theta", type=float, dest="volume_theta", help="volume proxy threshold")
        if name == "busemann":
            p.add_argument("--theta", type=float, help="ray direction in radians")
            p.add_argument("--M", type=int)
        if name == "ends":
            p.add_argument("--r", type=int)
            p.add_argument("--R", type=int)
    return parser


def _overrides(args) -> dict:
    skip = {"command", "config", "out"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _headline(report) -> dict:
    out = {"kind": report.kind, "config_hash": report.config_hash[:16], "replicas": report.completed}
    for key in ("coexist", "boundary_coexist", "oracle_match", "count_ge_4", "count", "deviation", "mean_weight"):
        if key in report.aggregates:
            out[key] = report.aggregates[key]
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = SUBCOMMANDS[args.command]
    try:
        overrides = _overrides(args)
        if args.config:
            cfg = load_config(args.config, **overrides)
            if cfg.kind != kind:
                raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        else:
            cfg = make_config({"kind": kind}, **overrides)
        report = run_experiment(cfg)
        path = write_report(report, cfg, args.out)
    except (ReplicaAssertionError, WitnessError) as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, InfeasibleGeometry) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except FPPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_headline(report), indent=2, sort_keys=True, default=str))
    print(f"report written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
