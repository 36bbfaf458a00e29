"""KITTI-style 3D object detection scoring.

Ground truth is stratified into Easy / Moderate / Hard by 2D box height,
occlusion and truncation.  Detections are greedily matched per frame at a
fixed overlap (BEV or 3D IoU), pooled over frames, and summarised by
interpolated average precision.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .box_geom import iou_3d, iou_bev
from .errors import EmptyGroundTruth, FrameMismatch, IoFailure
from .ingest import Calibration, LabeledObject, read_calibration, read_labels

__all__ = [
    "DifficultyRule",
    "EASY",
    "MODERATE",
    "HARD",
    "DIFFICULTIES",
    "NEIGHBOR_CLASSES",
    "EvalConfig",
    "FrameMatch",
    "MetricResult",
    "EvalReport",
    "TP",
    "FP",
    "IGNORE",
    "stratify",
    "match_frame",
    "recall_samples",
    "average_precision",
    "evaluate",
    "format_table",
]

TP, FP, IGNORE = "tp", "fp", "ignored"
METRICS = ("AP_BEV", "AP_3D")


@dataclass(frozen=True)
class DifficultyRule:
    name: str
    min_box2d_height: float
    max_occlusion: int
    max_truncation: float

    def admits(self, obj: LabeledObject) -> bool:
        return (obj.box2d_height >= self.min_box2d_height
                and obj.occlusion <= self.max_occlusion
                and obj.truncation <= self.max_truncation)


EASY = DifficultyRule("Easy", 40.0, 0, 0.15)
MODERATE = DifficultyRule("Moderate", 25.0, 1, 0.30)
HARD = DifficultyRule("Hard", 25.0, 2, 0.50)
DIFFICULTIES = (EASY, MODERATE, HARD)

# classes that are neither counted nor penalised when evaluating the key class
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


@dataclass(frozen=True)
class EvalConfig:
    iou_min: float = 0.7
    n_recall_points: int = 11
    score_floor: float = 0.0
    difficulties: tuple[DifficultyRule, ...] = DIFFICULTIES
    calib_dir: Optional[str] = None

    def __post_init__(self):
        if self.n_recall_points not in (11, 40):
            raise ValueError("n_recall_points must be 11 or 40")
        if not 0.0 < self.iou_min <= 1.0:
            raise ValueError("iou_min must lie in (0, 1]")


def stratify(gts: Sequence[LabeledObject], rule: DifficultyRule, class_name: str = "Car"
             ) -> tuple[list[LabeledObject], list[LabeledObject]]:
    """Split a frame's ground truth into (valid, ignored) for one difficulty.

    Objects of other classes are dropped entirely, except ``DontCare`` and
    the neighbour classes of ``class_name``, which are ignored.
    """
    valid, ignored = [], []
    neighbours = NEIGHBOR_CLASSES.get(class_name, ())
    for g in gts:
        if g.class_name == class_name and g.box3d is not None:
            (valid if rule.admits(g) else ignored).append(g)
        elif g.class_name == "DontCare" or g.class_name in neighbours:
            ignored.append(g)
    return valid, ignored


@dataclass
class FrameMatch:
    det_status: list[str]
    det_gt: list[int]
    gt_matched: list[bool]
    scores: list[float]


def _overlap_fn(overlap: str):
    key = overlap.lower()
    if key == "bev":
        return iou_bev
    if key == "3d":
        return iou_3d
    raise ValueError(f"overlap must be 'bev' or '3d', got {overlap!r}")


def _image_coverage(det_box, region) -> float:
    # fraction of the detection's image box inside ``region``
    iw = min(det_box[2], region[2]) - max(det_box[0], region[0])
    ih = min(det_box[3], region[3]) - max(det_box[1], region[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / ((det_box[2] - det_box[0]) * (det_box[3] - det_box[1]))


def match_frame(dets: Sequence[LabeledObject], valid_gts: Sequence[LabeledObject],
                ignored_gts: Sequence[LabeledObject] = (), overlap: str = "bev",
                iou_min: float = 0.7, min_det_height: float = 0.0) -> FrameMatch:
    """Greedy matching of one frame's detections.

    Detections are visited by descending score.  Each claims the unmatched
    valid gt of highest IoU if that IoU reaches ``iou_min`` (TP).  Otherwise
    it is ignored when it overlaps an ignored gt at ``iou_min`` (DontCare
    regions without a 3D box use image-plane coverage of the detection), or
    when its 2D box is shorter than ``min_det_height``; else it is an FP.
    Results are reported in the input order of ``dets``.
    """
    fn = _overlap_fn(overlap)
    order = sorted(range(len(dets)), key=lambda i: -(dets[i].score or 0.0))
    status = [FP] * len(dets)
    det_gt = [-1] * len(dets)
    taken = [False] * len(valid_gts)
    for i in order:
        d = dets[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(valid_gts):
            if taken[j]:
                continue
            o = fn(d.box3d, g.box3d)
            if o >= iou_min and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
            status[i], det_gt[i] = TP, best
            continue
        for g in ignored_gts:
            if g.box3d is None:
                o = _image_coverage(d.box2d, g.box2d)
            else:
                o = fn(d.box3d, g.box3d)
            if o >= iou_min:
                status[i] = IGNORE
                break
        else:
            if d.box2d_height < min_det_height:
                status[i] = IGNORE
    return FrameMatch(status, det_gt, taken, [d.score or 0.0 for d in dets])


def recall_samples(n_points: int) -> np.ndarray:
    if n_points == 11:
        return np.array([k / 10 for k in range(11)])
    if n_points == 40:
        return np.array([k / 40 for k in range(1, 41)])
    raise ValueError("n_points must be 11 or 40")


def average_precision(frames: Sequence[FrameMatch], num_gt: int, n_points: int = 11
                      ) -> tuple[float, list[tuple[float, float]]]:
    """Interpolated AP (in percent) and the raw (recall, precision) curve.

    Matched detections from all frames are pooled and sorted by score;
    ties keep frame order, then line order.
    """
    if num_gt <= 0:
        raise EmptyGroundTruth("no valid ground truth for this class and difficulty")
    pooled = [(s, st == TP)
              for fm in frames for s, st in zip(fm.scores, fm.det_status) if st != IGNORE]
    pooled.sort(key=lambda t: -t[0])
    is_tp = np.array([t for _, t in pooled], dtype=bool)
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1)
    curve = [(float(r), float(p)) for r, p in zip(recall, precision)]
    total = 0.0
    for r in recall_samples(n_points):
        mask = recall >= r - 1e-12
        if mask.any():
            total += float(precision[mask].max())
    return 100.0 * total / n_points, curve


@dataclass
class MetricResult:
    ap: Optional[float]
    curve: list[tuple[float, float]]
    num_gt: int
    num_det: int
    tp: int
    fp: int


@dataclass
class EvalReport:
    class_name: str
    iou_min: float
    interp_points: int
    results: dict[str, dict[str, MetricResult]] = field(default_factory=dict)

    def ap(self, metric: str, difficulty: str) -> Optional[float]:
        return self.results[metric][difficulty.lower()].ap

    def to_dict(self) -> dict:
        def rounded(v):
            return None if v is None else round(v, 2)

        return {
            "class": self.class_name,
            "iou_min": self.iou_min,
            "interp_points": self.interp_points,
            "results": {m: {d: rounded(r.ap) for d, r in res.items()}
                        for m, res in self.results.items()},
            "curves": {m: {d: [list(pt) for pt in r.curve] for d, r in res.items()}
                       for m, res in self.results.items()},
            "counts": {m: {d: {"num_gt": r.num_gt, "num_det": r.num_det, "tp": r.tp, "fp": r.fp}
                           for d, r in res.items()}
                       for m, res in self.results.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _stems(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob("*.txt"))}


def evaluate(gt_dir, det_dir, class_name: str = "Car", config: EvalConfig = EvalConfig()
             ) -> EvalReport:
    """Score every detection file in ``det_dir`` against ``gt_dir``.

    Files pair by stem.  A gt frame without a detection file counts as all
    missed; a detection file without gt raises :class:`FrameMismatch`.
    """
    gt_dir, det_dir = Path(gt_dir), Path(det_dir)
    for d in (gt_dir, det_dir):
        if not d.is_dir():
            raise IoFailure(f"{d}: not a directory")
    gt_files, det_files = _stems(gt_dir), _stems(det_dir)
    extra = set(det_files) - set(gt_files)
    if extra:
        raise FrameMismatch(extra)

    frames = []
    for stem, gpath in gt_files.items():
        calib = None
        if config.calib_dir is not None:
            calib = read_calibration(os.path.join(config.calib_dir, stem + ".txt"))
        gts = read_labels(gpath, calib=calib)
        dets = []
        if stem in det_files:
            dets = [d for d in read_labels(det_files[stem], with_scores=True, calib=calib)
                    if d.class_name == class_name and d.box3d is not None
                    and d.score >= config.score_floor]
        frames.append((gts, dets))

    report = EvalReport(class_name, config.iou_min, config.n_recall_points)
    for metric, overlap in zip(METRICS, ("bev", "3d")):
        report.results[metric] = {}
        for rule in config.difficulties:
            matches, num_gt = [], 0
            for gts, dets in frames:
                valid, ignored = stratify(gts, rule, class_name)
                num_gt += len(valid)
                matches.append(match_frame(dets, valid, ignored, overlap,
                                           config.iou_min, rule.min_box2d_height))
            try:
                ap, curve = average_precision(matches, num_gt, config.n_recall_points)
            except EmptyGroundTruth:
                ap, curve = None, []
            tp = sum(s == TP for m in matches for s in m.det_status)
            fp = sum(s == FP for m in matches for s in m.det_status)
            report.results[metric][rule.name.lower()] = MetricResult(
                ap, curve, num_gt, tp + fp, tp, fp)
    return report


def format_table(report: EvalReport) -> str:
    """Plain-text grid: AP_BEV and AP_3D by difficulty."""
    diffs = list(next(iter(report.results.values())).keys())
    short = {"easy": "Easy", "moderate": "Mod", "hard": "Hard"}
    head = f"{'class':<10}" + "".join(f"{m + ' ' + short.get(d, d):>14}"
                                     for m in report.results for d in diffs)
    cells = []
    for m, res in report.results.items():
        for d in diffs:
            ap = res[d].ap
            cells.append(f"{'-' if ap is None else f'{ap:.2f}':>14}")
    return head + "\n" + f"{report.class_name:<10}" + "".join(cells) + "\n"
