"""Prior boxes, training target assignment and prediction decoding.

Regression residuals follow the usual anchor-relative form: centre offsets
normalised by the anchor footprint diagonal (and height for z), log size
ratios, and the sine of the yaw difference.  A separate direction bit
resolves the pi ambiguity of the sine residual.

File layouts
------------
TGT1 (targets, written by :func:`write_targets`)::

    b"TGT1" b"<N>\\n"  then N records of  i8 label, 7 x f32 regression, i8 direction

    label: -1 ignored, 0 negative, 1 positive; all little-endian.

PRD1 (raw network outputs, read by :func:`read_predictions`)::

    b"PRD1" b"<N>\\n"  then N records of  f32 score, 7 x f32 regression, f32 direction logit

    score is a probability in [0, 1]; direction bit = logit > 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .box_geom import Box3D, Detection, iou_2d_matrix, nms_bev, normalize_angle
from .errors import NonFinitePrediction
from .ingest import LabeledObject
from .pillars import PillarGridConfig

__all__ = [
    "AnchorConfig",
    "AnchorSet",
    "TargetAssignment",
    "POSITIVE",
    "NEGATIVE",
    "IGNORED",
    "generate_anchors",
    "bev_footprints",
    "assign_targets",
    "encode_box",
    "decode_box",
    "encode_boxes",
    "decode_boxes",
    "direction_bit",
    "decode_predictions",
    "write_targets",
    "read_targets",
    "write_predictions",
    "read_predictions",
]

POSITIVE, NEGATIVE, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class AnchorConfig:
    anchor_dims: tuple[float, float, float] = (1.6, 3.9, 1.56)  # width, length, height
    yaws: tuple[float, ...] = (0.0, math.pi / 2)
    z_center: float = -1.0
    stride: int = 2
    pos_iou: float = 0.6
    neg_iou: float = 0.45
    class_name: str = "Car"

    def __post_init__(self):
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValueError("need 0 <= neg_iou <= pos_iou <= 1")
        if min(self.anchor_dims) <= 0:
            raise ValueError("anchor dimensions must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.yaws:
            raise ValueError("at least one anchor yaw is required")


@dataclass(frozen=True)
class AnchorSet:
    """Anchors as an (N, 7) array of ``cx, cy, cz, length, width, height, yaw``.

    Ordering is row-major over the strided grid with yaw varying fastest.
    """

    boxes: np.ndarray
    rows: int
    cols: int
    num_yaws: int

    def __len__(self):
        return self.boxes.shape[0]

    def box(self, i: int) -> Box3D:
        return Box3D.from_array(self.boxes[i])


@dataclass
class TargetAssignment:
    labels: np.ndarray       # int8, POSITIVE / NEGATIVE / IGNORED
    gt_index: np.ndarray     # int64, -1 unless positive
    regression: np.ndarray   # (N, 7) float64, zero unless positive
    direction: np.ndarray    # int8
    max_iou: np.ndarray = field(default=None)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == POSITIVE)


def generate_anchors(grid: PillarGridConfig, cfg: AnchorConfig = AnchorConfig()) -> AnchorSet:
    step = cfg.stride * grid.cell
    rows = grid.height // cfg.stride
    cols = grid.width // cfg.stride
    w, l, h = cfg.anchor_dims
    ys = grid.y_range[0] + (np.arange(rows) + 0.5) * step
    xs = grid.x_range[0] + (np.arange(cols) + 0.5) * step
    yaws = np.asarray(cfg.yaws, dtype=np.float64)
    yy, xx, aa = np.meshgrid(ys, xs, yaws, indexing="ij")
    n = yy.size
    boxes = np.empty((n, 7))
    boxes[:, 0] = xx.ravel()
    boxes[:, 1] = yy.ravel()
    boxes[:, 2] = cfg.z_center
    boxes[:, 3] = l
    boxes[:, 4] = w
    boxes[:, 5] = h
    boxes[:, 6] = aa.ravel()
    return AnchorSet(boxes, rows, cols, len(yaws))


def bev_footprints(boxes: np.ndarray) -> np.ndarray:
    """Axis-aligned BEV rectangles ``(x1, y1, x2, y2)`` for (N, 7) boxes.

    Each box is snapped to whichever of yaw 0 or pi/2 is closer, so length
    lies along x or along y.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    along_x = np.abs(np.cos(boxes[:, 6])) >= np.abs(np.sin(boxes[:, 6]))
    ex = np.where(along_x, boxes[:, 3], boxes[:, 4]) * 0.5
    ey = np.where(along_x, boxes[:, 4], boxes[:, 3]) * 0.5
    return np.column_stack([boxes[:, 0] - ex, boxes[:, 1] - ey,
                            boxes[:, 0] + ex, boxes[:, 1] + ey])


def direction_bit(yaw: float) -> int:
    """1 when the normalised yaw lies in [0, pi)."""
    y = normalize_angle(yaw)
    return int(0.0 <= y < math.pi)


def encode_box(gt: Box3D, anchor: Box3D) -> np.ndarray:
    d = math.hypot(anchor.width, anchor.length)
    return np.array([
        (gt.cx - anchor.cx) / d,
        (gt.cy - anchor.cy) / d,
        (gt.cz - anchor.cz) / anchor.height,
        math.log(gt.width / anchor.width),
        math.log(gt.length / anchor.length),
        math.log(gt.height / anchor.height),
        math.sin(gt.yaw - anchor.yaw),
    ])


def decode_box(pred, anchor: Box3D, direction: int) -> Box3D:
    """Invert :func:`encode_box`.

    The yaw residual is clamped to [-1, 1] before the arcsine; the result
    is flipped by pi when its direction bit disagrees with ``direction``.
    """
    p = [float(v) for v in pred]
    if len(p) != 7 or not all(math.isfinite(v) for v in p):
        raise NonFinitePrediction(f"prediction must be 7 finite reals, got {pred!r}")
    dx, dy, dz, dw, dl, dh, dt = p
    d = math.hypot(anchor.width, anchor.length)
    yaw = normalize_angle(anchor.yaw + math.asin(min(1.0, max(-1.0, dt))))
    if direction_bit(yaw) != int(direction):
        yaw = normalize_angle(yaw + math.pi)
    return Box3D(
        anchor.cx + dx * d,
        anchor.cy + dy * d,
        anchor.cz + dz * anchor.height,
        anchor.length * math.exp(dl),
        anchor.width * math.exp(dw),
        anchor.height * math.exp(dh),
        yaw,
    )


def encode_boxes(gts: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorised :func:`encode_box` over matching rows of (N, 7) arrays."""
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 7)
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    d = np.hypot(a[:, 4], a[:, 3])
    return np.column_stack([
        (g[:, 0] - a[:, 0]) / d,
        (g[:, 1] - a[:, 1]) / d,
        (g[:, 2] - a[:, 2]) / a[:, 5],
        np.log(g[:, 4] / a[:, 4]),
        np.log(g[:, 3] / a[:, 3]),
        np.log(g[:, 5] / a[:, 5]),
        np.sin(g[:, 6] - a[:, 6]),
    ])


def decode_boxes(preds: np.ndarray, anchors: np.ndarray, directions) -> np.ndarray:
    """Vectorised :func:`decode_box`; returns an (N, 7) box array."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 7)
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    if not np.isfinite(p).all():
        raise NonFinitePrediction("non-finite regression values")
    d = np.hypot(a[:, 4], a[:, 3])
    yaw = a[:, 6] + np.arcsin(np.clip(p[:, 6], -1.0, 1.0))
    yaw = _wrap(yaw)
    bit = ((yaw >= 0.0) & (yaw < math.pi)).astype(np.int64)
    yaw = np.where(bit != np.asarray(directions, dtype=np.int64), _wrap(yaw + math.pi), yaw)
    return np.column_stack([
        a[:, 0] + p[:, 0] * d,
        a[:, 1] + p[:, 1] * d,
        a[:, 2] + p[:, 2] * a[:, 5],
        a[:, 3] * np.exp(p[:, 4]),
        a[:, 4] * np.exp(p[:, 3]),
        a[:, 5] * np.exp(p[:, 5]),
        yaw,
    ])


def _wrap(theta: np.ndarray) -> np.ndarray:
    # vector form of normalize_angle, range (-pi, pi]
    t = np.fmod(theta, 2.0 * math.pi)
    t = np.where(t <= -math.pi, t + 2.0 * math.pi, t)
    return np.where(t > math.pi, t - 2.0 * math.pi, t)


def _gt_boxes(gts: Sequence, class_name: str) -> list[Box3D]:
    out = []
    for g in gts:
        if isinstance(g, LabeledObject):
            if g.class_name != class_name or g.box3d is None:
                continue
            out.append(g.box3d)
        else:
            out.append(g)
    return out


def assign_targets(anchors: AnchorSet, gts: Sequence, cfg: AnchorConfig = AnchorConfig()
                   ) -> TargetAssignment:
    """Label anchors by axis-aligned BEV IoU against the ground truth.

    ``gts`` holds sensor-frame :class:`LabeledObject` rows (only
    ``cfg.class_name`` is used) or bare :class:`Box3D` instances.  Anchors
    reaching ``pos_iou`` are positive, those below ``neg_iou`` negative and
    the rest ignored; in addition every gt claims its best anchor whenever
    that IoU is above zero.  Ties go to the lowest index.
    """
    n = len(anchors)
    labels = np.full(n, NEGATIVE, dtype=np.int8)
    gt_index = np.full(n, -1, dtype=np.int64)
    regression = np.zeros((n, 7))
    direction = np.zeros(n, dtype=np.int8)
    boxes = _gt_boxes(gts, cfg.class_name)
    if not boxes:
        return TargetAssignment(labels, gt_index, regression, direction, np.zeros(n))

    gt_arr = np.stack([b.as_array() for b in boxes])
    iou = iou_2d_matrix(bev_footprints(anchors.boxes), bev_footprints(gt_arr))
    best_gt = np.argmax(iou, axis=1)
    max_iou = iou[np.arange(n), best_gt]

    labels[max_iou >= cfg.neg_iou] = IGNORED
    pos = max_iou >= cfg.pos_iou
    labels[pos] = POSITIVE
    gt_index[pos] = best_gt[pos]
    for j in range(len(boxes)):
        k = int(np.argmax(iou[:, j]))
        if iou[k, j] > 0.0:
            labels[k] = POSITIVE
            gt_index[k] = j

    p = np.flatnonzero(labels == POSITIVE)
    regression[p] = encode_boxes(gt_arr[gt_index[p]], anchors.boxes[p])
    gt_yaw = _wrap(gt_arr[gt_index[p], 6])
    direction[p] = ((gt_yaw >= 0.0) & (gt_yaw < math.pi)).astype(np.int8)
    return TargetAssignment(labels, gt_index, regression, direction, max_iou)


def decode_predictions(scores, regression, direction, anchors: AnchorSet,
                       score_floor: float = 0.05, nms_iou: float = 0.5,
                       class_name: str = "Car") -> list[Detection]:
    """Turn per-anchor network outputs into NMS-filtered detections."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size != len(anchors):
        raise ValueError(f"{scores.size} scores for {len(anchors)} anchors")
    if not np.isfinite(scores).all():
        raise NonFinitePrediction("non-finite scores")
    keep = np.flatnonzero(scores >= score_floor)
    reg = np.asarray(regression, dtype=np.float64).reshape(-1, 7)[keep]
    dirs = np.asarray(direction).ravel()[keep]
    boxes = decode_boxes(reg, anchors.boxes[keep], dirs)
    dets = [Detection(Box3D.from_array(b), class_name, float(max(0.0, min(1.0, scores[i]))))
            for b, i in zip(boxes, keep)]
    return nms_bev(dets, nms_iou)


# -- TGT1 / PRD1 ------------------------------------------------------------

_TGT_DTYPE = np.dtype([("label", "<i1"), ("reg", "<f4", (7,)), ("dir", "<i1")])
_PRD_DTYPE = np.dtype([("score", "<f4"), ("reg", "<f4", (7,)), ("dir_logit", "<f4")])


def _write_records(path, magic: bytes, records: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(f"{records.size}\n".encode("ascii"))
        fh.write(records.tobytes())


def _read_records(path, magic: bytes, dtype: np.dtype) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != magic:
        raise ValueError(f"{path}: missing {magic.decode()} magic")
    nl = raw.index(b"\n", 4)
    n = int(raw[4:nl])
    body = raw[nl + 1:]
    if len(body) != n * dtype.itemsize:
        raise ValueError(f"{path}: expected {n} records of {dtype.itemsize} bytes")
    return np.frombuffer(body, dtype=dtype)


def write_targets(path, ta: TargetAssignment) -> None:
    rec = np.zeros(len(ta), dtype=_TGT_DTYPE)
    rec["label"] = ta.labels
    rec["reg"] = ta.regression
    rec["dir"] = ta.direction
    _write_records(path, b"TGT1", rec)


def read_targets(path) -> TargetAssignment:
    rec = _read_records(path, b"TGT1", _TGT_DTYPE)
    return TargetAssignment(
        labels=rec["label"].astype(np.int8),
        gt_index=np.full(rec.size, -1, dtype=np.int64),
        regression=rec["reg"].astype(np.float64),
        direction=rec["dir"].astype(np.int8),
    )


def write_predictions(path, scores, regression, direction_logit) -> None:
    scores = np.asarray(scores).ravel()
    rec = np.zeros(scores.size, dtype=_PRD_DTYPE)
    rec["score"] = scores
    rec["reg"] = np.asarray(regression).reshape(-1, 7)
    rec["dir_logit"] = np.asarray(direction_logit).ravel()
    _write_records(path, b"PRD1", rec)


def read_predictions(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(scores, regression, direction_bits)`` from a PRD1 file."""
    rec = _read_records(path, b"PRD1", _PRD_DTYPE)
    return (rec["score"].astype(np.float64), rec["reg"].astype(np.float64),
            (rec["dir_logit"] > 0).astype(np.int8))
