"""Command line entry point: ``tubetrack track | eval | phantom``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import graph, metrics, pipeline, tsp
from .config import MODES, PipelineConfig
from .cylinders import export_cylinders_csv, export_cylinders_obj
from .phantom import PhantomSpec, PhantomSpecError, generate_phantom, save_phantom
from .sampling import export_peaks_csv
from .volume_io import VolumeIOError, load_volume

log = logging.getLogger("tubetrack")


class CliError(RuntimeError):
    pass


def _parse_set(items) -> list[tuple[str, str]]:
    out = []
    for it in items or []:
        if "=" not in it:
            raise CliError(f"--set expects section.key=value, got {it!r}")
        k, v = it.split("=", 1)
        out.append((k.strip(), v))
    return out


def load_config(path=None, overrides=(), **top) -> PipelineConfig:
    """Defaults, then the JSON file, then ``--set`` overrides, then explicit flags."""
    cfg = PipelineConfig.from_json(path) if path else PipelineConfig()
    for k, v in overrides:
        cfg.set_path(k, v)
    for k, v in top.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _xyz(vals, what):
    if vals is None:
        return None
    a = np.asarray(vals, float)
    if a.shape != (3,):
        raise CliError(f"{what} needs three coordinates")
    return a


def cmd_track(args) -> int:
    cfg = load_config(args.config, _parse_set(args.set), mode=args.mode, seed=args.seed, threads=args.threads)
    if args.crop_z is not None:
        cfg.volume.crop_z = list(args.crop_z)
    start, end, gt = _xyz(args.start, "--start"), _xyz(args.end, "--end"), None
    vol_path, seg_path = args.volume, args.segmentation
    if args.phantom_dir:
        d = Path(args.phantom_dir)
        man = json.loads((d / "manifest.json").read_text())
        vol_path = vol_path or d / man["files"]["volume"]
        seg_path = seg_path or d / man["files"]["segmentation"]
        start = man["start_mm"] if start is None else start
        end = man["end_mm"] if end is None else end
        gt = args.gt or d / man["files"]["gt_path"]
    else:
        gt = args.gt
    if vol_path is None or seg_path is None or start is None or end is None:
        raise CliError("track needs --volume, --segmentation, --start and --end (or --phantom-dir)")

    t0 = time.perf_counter()
    volume = load_volume(vol_path)
    seg = load_volume(seg_path)
    log.info("input: volume %s spacing %s", volume.dims, volume.spacing)
    prep, res = pipeline.run(volume, seg, start, end, cfg, cfg.mode)
    for name, secs in {**prep.timings, **res.timings}.items():
        log.info("timing %-12s %.2fs", name, secs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tsp.export_path_csv(res.path, out / "path.csv")
    tsp.export_path_vtk(res.path, out / "path.vtk")
    export_peaks_csv(prep.must_pass, out / "peaks.csv")
    cyls = prep.cylinders or []
    export_cylinders_csv(cyls, out / "cylinders.csv")
    export_cylinders_obj(cyls, out / "cylinders.obj")
    if args.export_graph:
        graph.export_edge_list(res.rag, out / "graph_edges.txt")

    report = {
        "mode": res.mode,
        "start_node": res.start_node,
        "end_node": res.end_node,
        "n_supervoxels": prep.labeling.count,
        "n_edges": prep.rag.n_edges,
        "n_must_pass": len(prep.must_pass),
        "n_cylinders_valid": sum(c.valid for c in cyls),
        "path_nodes": len(res.path.node_ids),
        "path_cost": round(float(res.path.total_cost), 10),
        "path_length_mm": round(metrics.Curve(res.path.points_mm).length, 6) if len(res.path.points_mm) > 1 else 0.0,
    }
    if gt is not None:
        rep = metrics.evaluate(
            metrics.Curve(res.path.points_mm),
            metrics.read_curve_csv(gt),
            cfg.metrics.jump_tol_mm,
            cfg.metrics.dist_tol_mm,
            cfg.metrics.resample_step_mm,
        )
        report["metrics"] = json.loads(rep.to_json())
        log.info("metrics: C2C %.3f mm, max length without error %.1f mm", rep.c2c_mm, rep.max_len_no_error_mm)
    _dump_json(report, out / "report.json")
    (out / "effective_config.json").write_text(cfg.to_json() + "\n")
    log.info("wrote outputs to %s (%.2fs total)", out, time.perf_counter() - t0)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, _parse_set(args.set))
    pred = metrics.read_curve_csv(args.pred)
    gt = metrics.read_curve_csv(args.gt)
    rep = metrics.evaluate(pred, gt, cfg.metrics.jump_tol_mm, cfg.metrics.dist_tol_mm, cfg.metrics.resample_step_mm)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_phantom(args) -> int:
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    for k, v in _parse_set(args.set):
        try:
            d[k] = json.loads(v)
        except json.JSONDecodeError:
            d[k] = v
    if args.kind:
        d["kind"] = args.kind
    if args.seed is not None:
        d["seed"] = args.seed
    spec = PhantomSpec.from_dict(d)
    ph = generate_phantom(spec)
    man = save_phantom(ph, args.out)
    log.info("phantom %s: GT length %.1f mm, %d contacts -> %s", spec.kind, man["gt_length_mm"], len(ph.contacts_mm), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubetrack", description="Path tracking through convoluted tubes in 3D volumes.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for stage logs, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="track a path between two points")
    t.add_argument("--volume", help="NIfTI or raw+json volume")
    t.add_argument("--segmentation", help="binary mask on the same grid")
    t.add_argument("--start", nargs=3, type=float, metavar=("X", "Y", "Z"), help="start point in mm")
    t.add_argument("--end", nargs=3, type=float, metavar=("X", "Y", "Z"), help="end point in mm")
    t.add_argument("--phantom-dir", help="read volume, mask, endpoints and GT from a phantom directory")
    t.add_argument("--gt", help="ground-truth path CSV; adds metrics to report.json")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--crop-z", nargs=2, type=int, metavar=("START", "STOP"), help="keep z slices START..STOP-1 before tracking")
    t.add_argument("--export-graph", action="store_true", help="also write graph_edges.txt")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="compare a tracked path with a ground-truth path")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--out", help="write the JSON report here too")
    e.add_argument("--config")
    e.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    e.set_defaults(func=cmd_eval)

    ph = sub.add_parser("phantom", help="render a synthetic tube phantom")
    ph.add_argument("spec", nargs="?", help="JSON phantom spec (fields of PhantomSpec)")
    ph.add_argument("--out", required=True)
    ph.add_argument("--kind")
    ph.add_argument("--seed", type=int)
    ph.add_argument("--set", action="append", metavar="FIELD=VALUE")
    ph.set_defaults(func=cmd_phantom)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, pipeline.PipelineError, PhantomSpecError, VolumeIOError, ValueError, KeyError, OSError) as exc:
        print(f"tubetrack {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
