"""Command-line entry point: ``shadowgrid {simulate,match,montecarlo,report}``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 no accepted trials.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cloud_io import CloudFormatError, read_cloud, write_cloud, write_scene
from .harness import (
    LIDAR_PRESETS,
    METHODS,
    ConfigError,
    ExperimentConfig,
    InsufficientDataError,
    default_grid,
    load_config,
    read_records,
    records_meta,
    report,
    report_suffix,
    run_experiment,
    sensor_fov,
    simulate_pair,
    summarize,
    write_records,
)
from .scan_match import STATE_LABELS, MatchError, cartesian_model, match, remove_ground_plane, spherical_model

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NO_TRIALS = 0, 1, 2, 3
FORMATS = ("text", "csv", "svg")

log = logging.getLogger("shadowgrid")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not argparse's default exit status 2
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        preset = getattr(args, "lidar", "desk")
        cfg = ExperimentConfig(scene_kind=getattr(args, "scene", "roadway"), lidar=LIDAR_PRESETS[preset][0]())
    overrides = {}
    for name in ("seed", "method", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            overrides["master_seed" if name == "seed" else name] = v
    return replace(cfg, **overrides) if overrides else cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    A, B, truth, scene = simulate_pair(cfg, args.location, args.trial)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "." + args.format
    seed = f"{cfg.master_seed}/{args.location}/{args.trial}"
    write_cloud(out / f"primary{ext}", A, seed)
    write_cloud(out / f"secondary{ext}", B, seed)
    write_scene(out / "scene.json", scene, cfg.master_seed)
    # same keys as the solution report: metres and radians
    state = dict(zip(STATE_LABELS, map(float, truth.state())))
    (out / "truth.json").write_text(json.dumps({"secondary_to_primary": state}, indent=2) + "\n")
    print(f"wrote {len(A)} + {len(B)} points to {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = _config(args)
    A, _ = read_cloud(args.primary)
    B, _ = read_cloud(args.secondary)
    fov = sensor_fov(cfg.lidar)
    if cfg.method == "spherical_shadow":
        grid = cfg.grid if cfg.grid is not None else default_grid(cfg.lidar)
        model = spherical_model(A, grid, fov)
    else:
        if cfg.method == "cartesian_no_ground":
            A = remove_ground_plane(A, cfg.ground_tolerance)
            B = remove_ground_plane(B, cfg.ground_tolerance)
        anchor = cfg.cartesian_anchor if cfg.cartesian_anchor is not None else (0.0, 0.0, 0.0)
        model = cartesian_model(A, cfg.cartesian_edge, anchor, fov)
    rep = match(model, B, cfg=cfg.match)
    text = rep.to_json()
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _write_reports(records, meta, prefix: Path, formats) -> int:
    try:
        table = summarize(records, meta.get("scene", "") + " " + meta.get("method", ""))
    except InsufficientDataError as exc:
        log.error("%s", exc)
        return EXIT_NO_TRIALS
    for fmt in formats:
        dest = prefix.with_name(prefix.name + report_suffix(fmt))
        text = report(table, fmt, dest, meta.get("config_hash", ""), meta.get("master_seed"))
        if fmt == "text":
            print(text, end="")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _config(args)
    records = run_experiment(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = records_meta(cfg)
    write_records(out / "records.csv", records, meta)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    accepted = sum(not r.rejected for r in records)
    log.info("%d of %d trials accepted", accepted, len(records))
    if accepted == 0:
        log.error("experiment produced zero accepted trials")
        return EXIT_NO_TRIALS
    return _write_reports(records, {k: str(v) for k, v in meta.items()}, out / "summary", args.format)


def cmd_report(args) -> int:
    records, meta = read_records(args.records)
    prefix = Path(args.output) if args.output else Path(args.records).with_suffix("")
    return _write_reports(records, meta, prefix, args.format)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shadowgrid", description="Shadow-aware voxel scan matching experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, method=False):
        sp.add_argument("--config", help="experiment configuration (JSON)")
        sp.add_argument("--lidar", choices=sorted(LIDAR_PRESETS), default="desk",
                        help="sensor preset when no config is given")
        sp.add_argument("--seed", type=int, help="master seed override")
        if method:
            sp.add_argument("--method", choices=METHODS)

    s = sub.add_parser("simulate", help="write one simulated scan pair")
    common(s)
    s.add_argument("--scene", choices=("roadway", "offroad"), default="roadway")
    s.add_argument("--location", type=int, default=0, help="scan-pair index along the trajectory")
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--format", choices=("ply", "csv"), default="ply")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("match", help="register a secondary cloud onto a primary cloud")
    common(m, method=True)
    m.add_argument("primary")
    m.add_argument("secondary")
    m.add_argument("-o", "--output", help="also write the solution JSON here")
    m.set_defaults(func=cmd_match)

    mc = sub.add_parser("montecarlo", help="run an experiment and summarise it")
    common(mc, method=True)
    mc.add_argument("--scene", choices=("roadway", "offroad"), default="roadway")
    mc.add_argument("--workers", type=int)
    mc.add_argument("--out-dir", default=".")
    mc.add_argument("--format", nargs="+", choices=FORMATS, default=["text", "csv"])
    mc.set_defaults(func=cmd_montecarlo)

    r = sub.add_parser("report", help="render tables and plots from a records file")
    r.add_argument("records")
    r.add_argument("-o", "--output", help="output path prefix (default: records path without suffix)")
    r.add_argument("--format", nargs="+", choices=FORMATS, default=list(FORMATS))
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CloudFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MatchError, np.linalg.LinAlgError) as exc:
        print(f"match failed: {exc}", file=sys.stderr)
        return EXIT_NO_TRIALS
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
