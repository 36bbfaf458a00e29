"""Oriented 3D boxes and the overlap measures built on them.

Boxes live in the sensor frame: x forward, y left, z up.  ``length`` runs
along the heading, ``width`` across it, and ``yaw`` is the heading angle
measured counter-clockwise from +x about the vertical axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "Box3D",
    "Detection",
    "normalize_angle",
    "bev_corners",
    "convex_clip",
    "polygon_area",
    "iou_bev",
    "iou_3d",
    "iou_2d_axis_aligned",
    "iou_2d_matrix",
    "nms_bev",
]

# clipped polygons with less area than this are treated as empty
AREA_EPS = 1e-12


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field in {vals}")
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"box dimensions must be positive, got l={self.length} w={self.width} h={self.height}")
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def z_interval(self) -> tuple[float, float]:
        half = 0.5 * self.height
        return self.cz - half, self.cz + half

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Box3D":
        return cls(*(float(v) for v in a[:7]))

    def translated(self, dx=0.0, dy=0.0, dz=0.0) -> "Box3D":
        return replace(self, cx=self.cx + dx, cy=self.cy + dy, cz=self.cz + dz)


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_name: str
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


def bev_corners(box: Box3D) -> np.ndarray:
    """Return the 4 BEV corners of ``box`` as a (4, 2) array in CCW order."""
    hl, hw = 0.5 * box.length, 0.5 * box.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for CCW vertex order."""
    if len(poly) < 3:
        return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return 0.5 * area


def convex_clip(subject, clip) -> list[tuple[float, float]]:
    """Sutherland-Hodgman: clip polygon ``subject`` against convex CCW ``clip``."""
    out = [(float(x), float(y)) for x, y in subject]
    clip = [(float(x), float(y)) for x, y in clip]
    scale = max(max(abs(v) for p in clip for v in p), 1.0)
    tol = 1e-12 * scale * scale
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        px, py = inp[-1]
        pd = ex * (py - ay) - ey * (px - ax)
        for qx, qy in inp:
            qd = ex * (qy - ay) - ey * (qx - ax)
            q_in = qd >= -tol
            p_in = pd >= -tol
            if q_in:
                if not p_in:
                    t = pd / (pd - qd)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif p_in:
                t = pd / (pd - qd)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            px, py, pd = qx, qy, qd
    return out


def _bev_overlap_area(a: Box3D, b: Box3D) -> float:
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    inter = convex_clip(bev_corners(a), bev_corners(b))
    area = polygon_area(inter)
    return area if area > AREA_EPS else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU of the two boxes' footprints."""
    inter = _bev_overlap_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return min(1.0, max(0.0, inter / union))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU of two yaw-only oriented boxes."""
    a0, a1 = a.z_interval
    b0, b1 = b.z_interval
    dz = min(a1, b1) - max(a0, b0)
    if dz <= 0.0:
        return 0.0
    inter_area = _bev_overlap_area(a, b)
    if inter_area == 0.0:
        return 0.0
    inter = inter_area * dz
    return min(1.0, max(0.0, inter / (a.volume + b.volume - inter)))


def iou_2d_axis_aligned(a, b) -> float:
    """IoU of two ``(x1, y1, x2, y2)`` rectangles."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def iou_2d_matrix(rects_a: np.ndarray, rects_b: np.ndarray) -> np.ndarray:
    """Pairwise axis-aligned IoU, shape (len(a), len(b))."""
    a = np.asarray(rects_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(rects_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return out


def nms_bev(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy rotated NMS.

    Detections are visited by descending score (stable, so equal scores keep
    input order); one is dropped when its BEV IoU with an already kept
    detection exceeds ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou_bev(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept
