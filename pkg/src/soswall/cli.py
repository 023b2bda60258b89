"""Command-line front end.

Subcommands map one-to-one onto the harness presets plus a contour-analysis
command for saved height fields.  Configuration comes from a JSON file (see
the README for the schema) with --seed/--out/--budget overrides.  Exit codes:
0 success, 2 configuration error, 3 fatal budget exhaustion.
"""

from __future__ import annotations

import argparse
import sys

from . import contours as ct
from . import harness
from .harness import ConfigError, ExperimentConfig, load_config
from .model import BoundaryCondition, height_field_from_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3

_PRESET_OF_COMMAND = {
    "sample": "sample",
    "staircase": "staircase",
    "ceiling-fall": "ceiling_fall",
    "compare-floor": "floor_vs_nofloor",
    "profile": "equilibrium_profile",
    "oracle": "oracle_suite",
    "bounds": "bounds_suite",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soswall",
                                 description="SOS surface dynamics toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in _PRESET_OF_COMMAND:
        p = sub.add_parser(cmd, help=f"run the {cmd} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, action="append",
                       help="override seeds (repeatable)")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--budget", type=int, help="override budget (sweeps)")
        p.add_argument("--allow-partial", action="store_true",
                       help="exit 0 even when budgets were exhausted")
    pc = sub.add_parser("contours", help="extract level contours from a saved field")
    pc.add_argument("--field", required=True, help="height-field JSON file")
    pc.add_argument("--level", type=int, required=True)
    pc.add_argument("--boundary", type=int, default=0)
    pc.add_argument("--out", required=True, help="output JSON path")
    pc.add_argument("--clusters", help="also write gradient-cluster CSV here")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.out:
        cfg.out_dir = args.out
    if args.budget is not None:
        if args.budget < 0:
            raise ConfigError("budget must be nonnegative")
        cfg.budget_sweeps = args.budget
    return cfg


def _budget_exhausted(result: dict) -> bool:
    flags = result.get("budget_exhausted")
    if flags and any(flags.values()):
        return True
    for row in result.get("rows", []):
        if isinstance(row, dict) and row.get("coalescence_sweeps", 0) is None:
            return True
    summary = result.get("summary", {})
    for entry in summary.values() if isinstance(summary, dict) else []:
        if isinstance(entry, dict):
            for v in entry.values():
                if isinstance(v, dict) and v.get("censored"):
                    return True
    return False


def run_contours_command(args) -> int:
    try:
        with open(args.field) as fh:
            eta, _ = height_field_from_json(fh.read())
    except (OSError, ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    xi = BoundaryCondition.flat(args.boundary)
    contours = ct.extract_level_contours(eta, xi, args.level)
    harness.atomic_write(args.out, ct.contours_to_json(contours))
    if args.clusters:
        ct.gradient_clusters(eta, xi).to_csv(args.clusters)
    print(f"{len(contours)} contours at level {args.level} -> {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "contours":
        return run_contours_command(args)
    try:
        cfg = load_config(args.config)
        expected = _PRESET_OF_COMMAND[args.command]
        if cfg.preset != expected:
            raise ConfigError(
                f"config preset {cfg.preset!r} does not match command "
                f"{args.command!r} (expected {expected!r})")
        cfg = _apply_overrides(cfg, args)
        result = harness.run_preset(cfg)  # presets validate mode-specific options
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    paths = harness.export_results(cfg, result)
    for p in paths:
        print(p)
    if _budget_exhausted(result) and not args.allow_partial:
        print("budget exhausted before all targets were reached", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
