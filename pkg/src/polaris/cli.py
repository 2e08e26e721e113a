"""Command line entry point: ``polaris {simulate,map,localize,eval}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import ConfigError, RunConfig, format_config, load_config, with_overrides
from .mapping import MapFormatError, load_map, save_map
from .pipeline import (EvalRun, PipelineError, drive_frames, run_eval, run_localization, run_mapping,
                       scenario_drives)
from .polarimetry import POL_CONFIGS

log = logging.getLogger("polaris")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.pol:
        over["pol"] = args.pol[0]
    return with_overrides(cfg, **over) if over else cfg


def _pols(args, cfg: RunConfig) -> list[str]:
    return list(dict.fromkeys(args.pol)) if args.pol else [cfg.pol]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_dir(args, out: Path) -> Path | None:
    if not args.dump:
        return None
    d = out / "dump"
    d.mkdir(exist_ok=True)
    return d


def _route_name(cfg: RunConfig, route) -> str:
    return f"{route.name}-{cfg.seed}"


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    route, map_drives, loc_drive = scenario_drives(cfg)
    for d in sorted(map_drives + [loc_drive], key=lambda d: d.index):
        io.write_trajectory(out / f"trajectory_{d.name}.csv", d.trajectory)
        io.write_detections(out / f"detections_{d.name}.csv",
                            [(fr.sample.t, fr.detections) for fr in drive_frames(route, d, cfg)])
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    return 0


def cmd_map(args) -> int:
    cfg = _config(args)
    out = _out(args)
    pols = _pols(args, cfg)
    route, map_drives, _ = scenario_drives(cfg)
    maps = run_mapping(cfg, route, map_drives, pols, dump=_dump_dir(args, out))
    for pol, m in maps.items():
        save_map(m, out / f"map_{pol}.txt")
    for d in map_drives:
        io.write_trajectory(out / f"trajectory_{d.name}.csv", d.trajectory)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    return 0


def cmd_localize(args) -> int:
    cfg = _config(args)
    out = _out(args)
    pols = _pols(args, cfg)
    if args.map and len(pols) > 1:
        raise PipelineError("--map takes a single polarization configuration")
    maps = {}
    for pol in pols:
        path = Path(args.map) if args.map else Path(args.maps_dir or args.out) / f"map_{pol}.txt"
        if not path.is_file():
            raise PipelineError(f"map file {path} not found")
        maps[pol] = load_map(path)
    route, _, drive = scenario_drives(cfg)
    run = run_localization(cfg, maps, route, drive, dump=_dump_dir(args, out))
    io.write_trajectory(out / "trajectory.csv", run.ground_truth)
    io.write_poses(out / "dead_reckoning.csv", run.dead_reckoning)
    evals = [EvalRun(_route_name(cfg, route), drive.name, "dead-reckoning", run.dead_reckoning, run.ground_truth)]
    for pol in pols:
        io.write_estimates(out / f"estimates_{pol}.csv", run.estimates[pol])
        io.write_associations(out / f"associations_{pol}.log", run.associations[pol])
        evals.append(EvalRun(_route_name(cfg, route), drive.name, pol,
                             [(r.t, r.pose) for r in run.estimates[pol]], run.ground_truth))
    rows, _, _ = run_eval(evals, cfg.update_rate)
    io.write_metrics(out / "metrics.csv", rows)
    (out / "run_info.txt").write_text(f"route {_route_name(cfg, route)}\ndrive {drive.name}\n", encoding="utf-8")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    return 0


def _read_run_dir(run_dir: Path) -> list[EvalRun]:
    info = {}
    info_path = run_dir / "run_info.txt"
    if info_path.is_file():
        for line in info_path.read_text(encoding="utf-8").splitlines():
            k, _, v = line.partition(" ")
            info[k] = v.strip()
    route, drive = info.get("route", run_dir.name), info.get("drive", "drive")
    gt_path = run_dir / "trajectory.csv"
    gt = io.read_trajectory(gt_path) if gt_path.is_file() else None
    runs = []
    for est in sorted(run_dir.glob("estimates_*.csv")):
        pol = est.stem[len("estimates_"):]
        rows = io.read_estimates(est)
        runs.append(EvalRun(route, drive, pol, [(t, p) for t, p, _, _ in rows], gt))
    if not runs:
        log.warning("%s: no estimate files", run_dir)
    return runs


def cmd_eval(args) -> int:
    out = _out(args)
    runs = []
    for d in args.runs:
        runs.extend(_read_run_dir(Path(d)))
    rate = _config(args).update_rate
    rows, ccdfs, _ = run_eval(runs, rate)
    io.write_metrics(out / "metrics.csv", rows)
    for (pol, comp), (eps, val) in ccdfs.items():
        io.write_ccdf(out / f"ccdf_{comp}_{pol}.csv", eps, val)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polaris", description="Polarimetric radar landmark mapping and localization.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="scenario seed (overrides the config)")
    common.add_argument("--pol", action="append", choices=list(POL_CONFIGS),
                        help="polarization configuration; repeat for several")
    common.add_argument("--dump", action="store_true", help="also write intermediate artifacts")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write drive trajectories and detection logs")
    sub.add_parser("map", parents=[common], help="build landmark maps from the mapping drives")
    loc = sub.add_parser("localize", parents=[common], help="localize the left-out drive against maps")
    loc.add_argument("--map", help="map file (single configuration)")
    loc.add_argument("--maps-dir", help="directory holding map_<pol>.txt (default: --out)")
    ev = sub.add_parser("eval", parents=[common], help="metrics and CCDFs over localization run directories")
    ev.add_argument("runs", nargs="+", help="directories written by 'localize'")
    return p


COMMANDS = {"simulate": cmd_simulate, "map": cmd_map, "localize": cmd_localize, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MapFormatError, PipelineError, io.FormatError, OSError) as exc:
        print(f"polaris: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
