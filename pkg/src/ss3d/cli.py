"""Command-line entry point: ``ss3d <command> ...``.

Exit codes: 0 success, 1 some input files failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import anchors as ac
from .errors import ConfigError, SS3DError
from .ingest import (
    Calibration,
    LabeledObject,
    read_calibration,
    read_labels,
    read_point_cloud,
    read_raster,
    write_labels,
    write_point_cloud,
    project_box_to_image,
    box_to_camera,
)
from .kitti_eval import evaluate, format_table
from .pillars import (
    VARIANTS,
    encode,
    fc_encoder_macs,
    statistical_encoder_flops,
    write_feature_map,
)
from .config import RunConfig
from .pseudo_lidar import disparity_to_cloud

RESOLVED_CONFIG = "resolved_config.cfg"


class UsageError(Exception):
    pass


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, _, v = text.partition("=")
    return k.strip(), v.strip()


def _load_config(args, extra=()) -> RunConfig:
    return RunConfig.from_sources(getattr(args, "config", None),
                                  list(extra) + list(getattr(args, "set", None) or []))


def _prepare_out(out: str, cfg: RunConfig) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / RESOLVED_CONFIG).write_text(cfg.to_text())
    return path


def _inputs(path: str, suffix: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*" + suffix))
    if p.is_file():
        return [p]
    raise UsageError(f"{path}: no such file or directory")


def _calib_for(calib_dir, stem):
    if not calib_dir:
        return None
    return read_calibration(Path(calib_dir) / f"{stem}.txt")


def _run_batch(files, work, jobs):
    """Run ``work(path)`` per file; returns (results in file order, failures)."""
    def guarded(path):
        try:
            return path, work(path), None
        except (SS3DError, OSError, ValueError) as exc:
            return path, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(guarded, files))
    else:
        results = [guarded(f) for f in files]
    failures = [(p, e) for p, _, e in results if e is not None]
    for p, exc in failures:
        print(f"error: {p.name}: {exc}", file=sys.stderr)
    return results, failures


def cmd_encode(args) -> int:
    extra = [("grid.variant", args.variant)] if args.variant else []
    cfg = _load_config(args, extra)
    grid = cfg.grid
    out = _prepare_out(args.out, cfg)
    files = _inputs(args.input, ".bin")

    def work(path):
        t0 = time.perf_counter()
        cloud = read_point_cloud(path)
        fmap = encode(cloud, grid)
        write_feature_map(out / f"{path.stem}.pft", fmap)
        return (len(cloud), fmap.n_in_range, fmap.n_occupied, time.perf_counter() - t0)

    results, failures = _run_batch(files, work, args.jobs)
    for path, res, _ in results:
        if res is not None:
            n, n_in, occ, dt = res
            print(f"{path.stem}: points={n} in_range={n_in} occupied={occ} "
                  f"time={dt * 1000:.1f}ms")
    return 1 if failures else 0


def cmd_convert_stereo(args) -> int:
    cfg = _load_config(args)
    disp = read_raster(args.disparity, cfg._float("projection.disparity_scale"))
    calib = read_calibration(args.calib, cfg._float("projection.default_baseline"))
    seg = read_raster(args.seg, cfg._float("projection.seg_scale")) if args.seg else None
    cloud = disparity_to_cloud(disp, calib, cfg.projection, seg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_point_cloud(args.out, cloud)
    print(f"{Path(args.out).name}: points={len(cloud)}")
    return 0


def cmd_assign(args) -> int:
    cfg = _load_config(args)
    anchors = ac.generate_anchors(cfg.grid, cfg.anchors)
    out = _prepare_out(args.out, cfg)
    files = _inputs(args.gt, ".txt")
    calib_dir = args.calib or cfg.get("io.calib_dir")

    def work(path):
        gts = read_labels(path, calib=_calib_for(calib_dir, path.stem))
        ta = ac.assign_targets(anchors, gts, cfg.anchors)
        ac.write_targets(out / f"{path.stem}.tgt", ta)
        return len(ta.positives)

    results, failures = _run_batch(files, work, args.jobs)
    for path, res, _ in results:
        if res is not None:
            print(f"{path.stem}: anchors={len(anchors)} positives={res}")
    return 1 if failures else 0


def _detection_row(det, calib: Calibration) -> LabeledObject | None:
    box2d = project_box_to_image(det.box, calib)
    if box2d is None:
        return None
    h, w, l, x, y, z, ry = box_to_camera(det.box, calib)
    alpha = ry - math.atan2(x, z)
    alpha = (alpha + math.pi) % (2 * math.pi) - math.pi
    return LabeledObject(det.class_name, 0.0, 0, box2d, det.box, alpha=alpha, score=det.score)


def cmd_decode(args) -> int:
    cfg = _load_config(args)
    anchors = ac.generate_anchors(cfg.grid, cfg.anchors)
    out = _prepare_out(args.out, cfg)
    files = _inputs(args.pred, ".prd")
    calib_dir = args.calib or cfg.get("io.calib_dir")
    floor = cfg._float("decode.score_floor")
    nms_iou = cfg._float("decode.nms_iou")
    size_errors = []

    def work(path):
        scores, reg, dirs = ac.read_predictions(path)
        if scores.size != len(anchors):
            size_errors.append(path)
            raise ConfigError(f"{scores.size} predictions but {len(anchors)} anchors")
        calib = _calib_for(calib_dir, path.stem) or Calibration.nominal()
        dets = ac.decode_predictions(scores, reg, dirs, anchors, floor, nms_iou,
                                     cfg.anchors.class_name)
        rows = [r for r in (_detection_row(d, calib) for d in dets) if r is not None]
        write_labels(out / f"{path.stem}.txt", rows, calib)
        return len(rows)

    results, failures = _run_batch(files, work, args.jobs)
    for path, res, _ in results:
        if res is not None:
            print(f"{path.stem}: detections={res}")
    if size_errors:
        return 2
    return 1 if failures else 0


def cmd_eval(args) -> int:
    extra = [("eval.iou_min", str(args.overlap))]
    if args.interp:
        extra.append(("eval.interp_points", str(args.interp)))
    cfg = _load_config(args, extra)
    for d in (args.gt, args.det):
        if not Path(d).is_dir():
            raise UsageError(f"{d}: not a directory")
    report = evaluate(args.gt, args.det, args.cls, cfg.eval)
    print(format_table(report), end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        (out.parent / RESOLVED_CONFIG).write_text(cfg.to_text())
    else:
        print(report.to_json(), end="")
    return 0


def cmd_cost(args) -> int:
    cfg = _load_config(args)
    macs = fc_encoder_macs(args.pillars, args.points_per_pillar, args.in_features,
                           args.out_features)
    ops = statistical_encoder_flops(cfg.grid, args.points)
    ratio = f"{macs / ops:.1f}" if ops else "inf"
    print(f"{'encoder':<28}{'operations':>16}")
    print(f"{'fully connected (MACs)':<28}{macs:>16,}")
    print(f"{'statistical (ops)':<28}{ops:>16,}")
    print(f"{'ratio':<28}{ratio:>16}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ss3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if jobs:
            p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("encode", help="point clouds -> PFT1 feature maps")
    p.add_argument("--input", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--out", required=True)
    common(p, jobs=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("convert-stereo", help="disparity PNG -> velodyne .bin")
    p.add_argument("--disparity", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--seg")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_convert_stereo)

    p = sub.add_parser("assign", help="labels -> TGT1 anchor targets")
    p.add_argument("--gt", required=True)
    p.add_argument("--calib", help="directory of per-frame calib files")
    p.add_argument("--out", required=True)
    common(p, jobs=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("decode", help="PRD1 network outputs -> KITTI detections")
    p.add_argument("--pred", required=True)
    p.add_argument("--calib", help="directory of per-frame calib files")
    p.add_argument("--out", required=True)
    common(p, jobs=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="KITTI AP_BEV / AP_3D report")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--class", dest="cls", default="Car")
    p.add_argument("--overlap", type=float, default=0.7)
    p.add_argument("--interp", type=int, choices=(11, 40))
    p.add_argument("--out", help="JSON report path (default: stdout)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="FC vs statistical encoder cost")
    p.add_argument("--pillars", type=int, default=12000)
    p.add_argument("--points-per-pillar", type=int, default=100)
    p.add_argument("--in-features", type=int, default=9)
    p.add_argument("--out-features", type=int, default=64)
    p.add_argument("--points", type=int, default=100000)
    common(p)
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"ss3d {args.command}: {exc}", file=sys.stderr)
        return 2
    except (SS3DError, OSError, ValueError) as exc:
        print(f"ss3d {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
