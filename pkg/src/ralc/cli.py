"""Command line front end: batch runs and cross-run comparison."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from importlib import resources
from typing import List, Optional

from .config import RunConfig, load_config_file
from .evaluation import map_scores
from .runner import run as execute_run
from .sim import Environment, OccupancyMap, read_pgm


class ComparisonError(Exception):
    pass


def resolve_environment(spec: str) -> Environment:
    """A readable path wins; otherwise try the bundled environments."""
    if os.path.exists(spec):
        return Environment.load(spec)
    try:
        ref = resources.files("ralc").joinpath("environments", f"{spec}.env")
        text = ref.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise ValueError(f"unknown environment {spec!r}: not a file and not "
                         f"a bundled name")
    return Environment.from_text(text)


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    updates = {}
    if args.env is not None:
        updates["environment"] = args.env
    if args.algo is not None:
        updates["algorithm"] = args.algo
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.inject_failure is not None:
        updates["inject_failure"] = args.inject_failure
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _build_config(args)
        env = resolve_environment(cfg.environment)
        out_dir = (os.environ.get("RALC_OUT") or args.out
                   or os.path.join("runs",
                                   f"{env.name}_{cfg.algorithm}_s{cfg.seed}"))
        cfg = dataclasses.replace(cfg, out_dir=out_dir)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return execute_run(env, cfg, out_dir)


def _load_run(directory: str):
    metrics_path = os.path.join(directory, "metrics.json")
    if not os.path.exists(metrics_path):
        raise ComparisonError(f"missing metrics file in {directory}")
    with open(metrics_path, "r", encoding="utf-8") as fh:
        metrics = json.load(fh)
    timing_path = os.path.join(directory, "timing.json")
    timing = {}
    if os.path.exists(timing_path):
        with open(timing_path, "r", encoding="utf-8") as fh:
            timing = json.load(fh)
    map_path = os.path.join(directory, "map_final.pgm")
    occupancy = None
    if os.path.exists(map_path):
        occupancy = OccupancyMap(read_pgm(map_path),
                                 (metrics.get("map_origin_x", 0.0),
                                  metrics.get("map_origin_y", 0.0)),
                                 metrics.get("map_resolution", 0.05))
    return metrics, timing, occupancy


def _percent(value: float, reference: float) -> Optional[float]:
    if reference == 0:
        return None
    return (value / reference - 1.0) * 100.0


def build_compare_report(ref_dir: str, run_dirs: List[str]) -> dict:
    if not run_dirs:
        raise ComparisonError("no run directories given")
    ref_metrics, ref_timing, ref_map = _load_run(ref_dir)
    if ref_map is None:
        raise ComparisonError(f"missing map_final.pgm in {ref_dir}")
    rows = []
    for directory in [ref_dir] + list(run_dirs):
        metrics, timing, occupancy = _load_run(directory)
        row = {
            "dir": directory,
            "algorithm": metrics.get("algorithm"),
            "seed": metrics.get("seed"),
            "duration_s": metrics.get("duration_s"),
            "keyframes": metrics.get("keyframes_final"),
            "submaps": metrics.get("submaps"),
            "mean_pgo_ms": timing.get("mean_pgo_ms"),
        }
        if occupancy is not None:
            try:
                scores = map_scores(occupancy, ref_map)
                row["miou"] = scores["miou"]
                row["mdte"] = scores["mdte"]
            except ValueError:
                row["miou"] = None
                row["mdte"] = None
        for key in ("duration_s", "keyframes", "submaps", "mean_pgo_ms"):
            ref_value = {"duration_s": ref_metrics.get("duration_s"),
                         "keyframes": ref_metrics.get("keyframes_final"),
                         "submaps": ref_metrics.get("submaps"),
                         "mean_pgo_ms": ref_timing.get("mean_pgo_ms")}[key]
            value = row.get(key)
            row[f"delta_{key}_pct"] = (None if value is None or ref_value in (None, 0)
                                       else _percent(value, ref_value))
        rows.append(row)
    return {"reference": ref_dir, "rows": rows}


def _format_table(report: dict) -> str:
    columns = [("dir", "{}"), ("algorithm", "{}"), ("seed", "{}"),
               ("duration_s", "{:.0f}"), ("keyframes", "{}"),
               ("submaps", "{}"), ("mean_pgo_ms", "{:.2f}"),
               ("miou", "{:.4f}"), ("mdte", "{:.4f}"),
               ("delta_keyframes_pct", "{:+.1f}"),
               ("delta_submaps_pct", "{:+.1f}"),
               ("delta_mean_pgo_ms_pct", "{:+.1f}")]
    header = [name for name, _ in columns]
    body = []
    for row in report["rows"]:
        cells = []
        for name, fmt in columns:
            value = row.get(name)
            cells.append("n/a" if value is None else fmt.format(value))
        body.append(cells)
    widths = [max(len(header[i]), *(len(r[i]) for r in body))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for cells in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def cmd_compare(args) -> int:
    try:
        report = build_compare_report(args.ref, args.dirs)
    except ComparisonError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(_format_table(report))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ralc",
        description="Region-based exploration runs and comparisons.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one exploration run")
    run_p.add_argument("--env", help="environment file or bundled name")
    run_p.add_argument("--config", help="key=value configuration file")
    run_p.add_argument("--algo",
                       choices=["ralc", "ralc-no-marg", "alc-baseline"])
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--out", help="output directory (RALC_OUT overrides)")
    run_p.add_argument("--inject-failure", metavar="region=<id>,kind=<kind>")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="tabulate runs against a reference")
    cmp_p.add_argument("--ref", required=True, help="reference run directory")
    cmp_p.add_argument("dirs", nargs="*", help="run directories to compare")
    cmp_p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
