"""Readers and writers for the KITTI-style files the pipeline consumes.

* velodyne ``.bin`` point clouds (little-endian f32 quadruples, no header)
* ``calib`` text files (``KEY: v0 v1 ...``)
* object label / detection text files (15 fields, 16 with a score)
* single-channel PNG rasters (disparity, segmentation)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .box_geom import Box3D, normalize_angle
from .errors import (
    FieldCountError,
    IoFailure,
    MalformedRecordLength,
    MatrixShapeError,
    MissingKey,
    ParseError,
    UnsupportedFormat,
)

__all__ = [
    "PointCloud",
    "Calibration",
    "LabeledObject",
    "Raster",
    "read_point_cloud",
    "write_point_cloud",
    "read_calibration",
    "write_calibration",
    "read_labels",
    "parse_label_line",
    "format_label_line",
    "write_labels",
    "read_raster",
    "write_raster",
    "box_from_camera",
    "box_to_camera",
    "project_box_to_image",
]

KITTI_BASELINE = 0.54

_VELO_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class PointCloud:
    """``points`` is an (N, 4) float64 array of x, y, z, v.

    ``dropped`` counts records discarded while reading (non-finite fields).
    """

    points: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite values")
        v = pts[:, 3]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("point v-values must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def v(self) -> np.ndarray:
        return self.points[:, 3]

    def with_v(self, v) -> "PointCloud":
        pts = self.points.copy()
        pts[:, 3] = v
        return PointCloud(pts, self.dropped)


def read_point_cloud(path) -> PointCloud:
    """Decode a KITTI velodyne scan.

    Records with a NaN/Inf field are dropped and counted; reflectance is
    clipped into [0, 1].
    """
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(raw) % 16:
        raise MalformedRecordLength(path, len(raw))
    arr = np.frombuffer(raw, dtype=_VELO_DTYPE).reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(arr).all(axis=1)
    arr = arr[finite]
    arr[:, 3] = np.clip(arr[:, 3], 0.0, 1.0)
    return PointCloud(arr, dropped=int((~finite).sum()))


def write_point_cloud(path, cloud: PointCloud) -> None:
    data = np.ascontiguousarray(cloud.points, dtype=_VELO_DTYPE)
    try:
        with open(path, "wb") as fh:
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _homogeneous(mat: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[: mat.shape[0], : mat.shape[1]] = mat
    return out


def _check_rigid(name: str, mat: np.ndarray) -> None:
    if not np.allclose(mat[3], [0.0, 0.0, 0.0, 1.0]):
        raise MatrixShapeError(f"{name}: bottom row must be (0, 0, 0, 1)")
    if abs(np.linalg.det(mat[:3, :3])) < 1e-12:
        raise MatrixShapeError(f"{name}: upper 3x3 block is singular")


@dataclass(frozen=True)
class Calibration:
    """Rectified pinhole camera plus the sensor-to-camera extrinsics.

    ``offset_u``/``offset_v`` hold the metric shift of the left camera
    relative to the rectified reference camera (``-P2[0,3] / fu`` and
    ``-P2[1,3] / fv``); both are zero for a synthetic rig.
    """

    focal_u: float
    focal_v: float
    center_u: float
    center_v: float
    baseline: float
    rect: np.ndarray = field(default_factory=lambda: np.eye(4))
    velo_to_cam: np.ndarray = field(default_factory=lambda: np.eye(4))
    offset_u: float = 0.0
    offset_v: float = 0.0

    def __post_init__(self):
        if not (self.focal_u > 0 and self.focal_v > 0):
            raise ValueError("focal lengths must be positive")
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")
        for name in ("rect", "velo_to_cam"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.shape != (4, 4):
                raise MatrixShapeError(f"{name}: expected 4x4, got {m.shape}")
            _check_rigid(name, m)
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def nominal(cls, focal=721.5377, center_u=609.5593, center_v=172.854,
                baseline=KITTI_BASELINE) -> "Calibration":
        """KITTI-like intrinsics with a pure axis swap between frames.

        Camera (x right, y down, z forward) maps to sensor
        (x = z_cam, y = -x_cam, z = -y_cam).  Used when a label file has no
        accompanying calibration: IoU is rigid-invariant, so evaluation
        results do not depend on the extrinsics.
        """
        swap = np.array([[0.0, -1.0, 0.0, 0.0],
                         [0.0, 0.0, -1.0, 0.0],
                         [1.0, 0.0, 0.0, 0.0],
                         [0.0, 0.0, 0.0, 1.0]])
        return cls(focal, focal, center_u, center_v, baseline, np.eye(4), swap)

    @property
    def sensor_to_camera(self) -> np.ndarray:
        return self.rect @ self.velo_to_cam

    @property
    def camera_to_sensor(self) -> np.ndarray:
        return np.linalg.inv(self.sensor_to_camera)

    def to_camera(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        m = self.sensor_to_camera
        return xyz @ m[:3, :3].T + m[:3, 3]

    def to_sensor(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        m = self.camera_to_sensor
        return xyz @ m[:3, :3].T + m[:3, 3]

    def project(self, cam_xyz) -> np.ndarray:
        """Pinhole projection of camera-frame points to (u, v) pixels."""
        cam = np.asarray(cam_xyz, dtype=np.float64).reshape(-1, 3)
        z = cam[:, 2]
        u = self.focal_u * (cam[:, 0] - self.offset_u) / z + self.center_u
        v = self.focal_v * (cam[:, 1] - self.offset_v) / z + self.center_v
        return np.stack([u, v], axis=1)


def _parse_calib_text(text: str) -> dict[str, np.ndarray]:
    entries = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            entries[key.strip()] = np.array([float(t) for t in rest.split()])
        except ValueError as exc:
            raise MatrixShapeError(f"{key.strip()}: non-numeric entry ({exc})") from None
    return entries


def _matrix(entries, key, rows, cols):
    if key not in entries:
        raise MissingKey(key)
    vals = entries[key]
    if vals.size != rows * cols:
        raise MatrixShapeError(f"{key}: expected {rows * cols} values, got {vals.size}")
    return vals.reshape(rows, cols)


def read_calibration(path, default_baseline: float = KITTI_BASELINE) -> Calibration:
    """Parse a KITTI object ``calib/*.txt`` file.

    The baseline is taken from the horizontal offsets of ``P2`` and ``P3``
    when ``P3`` is present, otherwise ``default_baseline`` is used.
    """
    try:
        text = open(path, "r").read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    entries = _parse_calib_text(text)
    p2 = _matrix(entries, "P2", 3, 4)
    rect = _homogeneous(_matrix(entries, "R0_rect", 3, 3))
    tr = _homogeneous(_matrix(entries, "Tr_velo_to_cam", 3, 4))
    fu, fv = p2[0, 0], p2[1, 1]
    if fu <= 0 or fv <= 0:
        raise MatrixShapeError("P2: focal lengths must be positive")
    baseline = default_baseline
    if "P3" in entries:
        p3 = _matrix(entries, "P3", 3, 4)
        b = (p2[0, 3] - p3[0, 3]) / fu
        if b > 0:
            baseline = b
    return Calibration(
        focal_u=float(fu), focal_v=float(fv),
        center_u=float(p2[0, 2]), center_v=float(p2[1, 2]),
        baseline=float(baseline), rect=rect, velo_to_cam=tr,
        offset_u=float(-p2[0, 3] / fu), offset_v=float(-p2[1, 3] / fv),
    )


def write_calibration(path, calib: Calibration) -> None:
    """Write ``calib`` in the KITTI text layout (P0..P3, R0_rect, Tr_velo_to_cam)."""
    def p_matrix(shift_u):
        p = np.zeros((3, 4))
        p[0, 0], p[0, 2] = calib.focal_u, calib.center_u
        p[1, 1], p[1, 2] = calib.focal_v, calib.center_v
        p[2, 2] = 1.0
        p[0, 3] = -calib.focal_u * shift_u
        p[1, 3] = -calib.focal_v * calib.offset_v
        return p

    rows = {
        "P0": p_matrix(0.0),
        "P1": p_matrix(calib.baseline),
        "P2": p_matrix(calib.offset_u),
        "P3": p_matrix(calib.offset_u + calib.baseline),
        "R0_rect": calib.rect[:3, :3],
        "Tr_velo_to_cam": calib.velo_to_cam[:3, :4],
    }
    with open(path, "w") as fh:
        for key, mat in rows.items():
            fh.write(key + ": " + " ".join(f"{v:.12e}" for v in mat.ravel()) + "\n")


# -- labels -----------------------------------------------------------------

@dataclass(frozen=True)
class LabeledObject:
    """One KITTI label row.  ``box3d`` is in the sensor frame.

    ``box3d`` is None only for rows with non-positive 3D dimensions, which
    KITTI uses for ``DontCare`` regions.
    """

    class_name: str
    truncation: float
    occlusion: int
    box2d: tuple[float, float, float, float]
    box3d: Optional[Box3D]
    alpha: float = -10.0
    score: Optional[float] = None

    @property
    def box2d_height(self) -> float:
        return self.box2d[3] - self.box2d[1]


def box_from_camera(h, w, l, x, y, z, ry, calib: Calibration) -> Box3D:
    """Convert KITTI camera-frame box parameters into a sensor-frame Box3D.

    KITTI locates the bottom face centre; ``ry`` rotates about camera y
    (pointing down), and ``ry = 0`` heads along camera +x.
    """
    center_cam = np.array([x, y - 0.5 * h, z])
    heading_cam = np.array([math.cos(ry), 0.0, -math.sin(ry)])
    m = calib.camera_to_sensor
    center = m[:3, :3] @ center_cam + m[:3, 3]
    heading = m[:3, :3] @ heading_cam
    yaw = math.atan2(heading[1], heading[0])
    return Box3D(float(center[0]), float(center[1]), float(center[2]), l, w, h, yaw)


def box_to_camera(box: Box3D, calib: Calibration) -> tuple[float, ...]:
    """Inverse of :func:`box_from_camera`; returns ``(h, w, l, x, y, z, ry)``."""
    m = calib.sensor_to_camera
    center = m[:3, :3] @ np.array([box.cx, box.cy, box.cz]) + m[:3, 3]
    heading = m[:3, :3] @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
    ry = normalize_angle(math.atan2(-heading[2], heading[0]))
    return (box.height, box.width, box.length,
            float(center[0]), float(center[1] + 0.5 * box.height), float(center[2]), ry)


def project_box_to_image(box: Box3D, calib: Calibration):
    """Tight 2D image box around the projected corners, or None if behind the camera."""
    hl, hw, hh = 0.5 * box.length, 0.5 * box.width, 0.5 * box.height
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.array([[sx * hl, sy * hw, sz * hh]
                      for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    world = np.empty_like(local)
    world[:, 0] = box.cx + c * local[:, 0] - s * local[:, 1]
    world[:, 1] = box.cy + s * local[:, 0] + c * local[:, 1]
    world[:, 2] = box.cz + local[:, 2]
    cam = calib.to_camera(world)
    if (cam[:, 2] <= 0.1).any():
        return None
    uv = calib.project(cam)
    return (float(uv[:, 0].min()), float(uv[:, 1].min()),
            float(uv[:, 0].max()), float(uv[:, 1].max()))


_FIELD_NAMES = ("type", "truncated", "occluded", "alpha", "left", "top", "right", "bottom",
                "height", "width", "length", "x", "y", "z", "rotation_y", "score")


def parse_label_line(line: str, line_no: int, with_scores: bool = False,
                     calib: Optional[Calibration] = None) -> LabeledObject:
    parts = line.split()
    expected = 16 if with_scores else 15
    if len(parts) != expected:
        raise FieldCountError(line_no, len(parts), expected)
    nums = []
    for idx in range(1, expected):
        try:
            val = float(parts[idx])
        except ValueError:
            raise ParseError(line_no, _FIELD_NAMES[idx], repr(parts[idx])) from None
        if not math.isfinite(val):
            raise ParseError(line_no, _FIELD_NAMES[idx], "non-finite")
        nums.append(val)
    trunc, occ, alpha, x1, y1, x2, y2, h, w, l, x, y, z, ry = nums[:14]
    if occ != int(occ):
        raise ParseError(line_no, "occluded", "not an integer")
    if not (x2 > x1 and y2 > y1):
        raise ParseError(line_no, "left", "degenerate 2D box")
    if h > 0 and w > 0 and l > 0:
        box = box_from_camera(h, w, l, x, y, z, ry, calib or Calibration.nominal())
    elif parts[0] == "DontCare":
        box = None
    else:
        raise ParseError(line_no, "height", "3D dimensions must be positive")
    score = nums[14] if with_scores else None
    return LabeledObject(
        class_name=parts[0], truncation=trunc, occlusion=int(occ),
        box2d=(x1, y1, x2, y2), box3d=box, alpha=alpha, score=score,
    )


def read_labels(path, with_scores: bool = False,
                calib: Optional[Calibration] = None) -> list[LabeledObject]:
    """Parse a KITTI label file.

    With ``calib=None`` boxes are moved to the sensor frame by the nominal
    axis swap of :meth:`Calibration.nominal`.
    """
    try:
        text = open(path, "r").read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    objects = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            objects.append(parse_label_line(line, line_no, with_scores, calib))
    return objects


def _fmt(v: float) -> str:
    s = f"{v:.6f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    return "0.0" if s in ("-0.0", "-0.") else s


def format_label_line(obj: LabeledObject, calib: Optional[Calibration] = None) -> str:
    fields = [obj.class_name, _fmt(obj.truncation), str(obj.occlusion), _fmt(obj.alpha)]
    fields += [_fmt(v) for v in obj.box2d]
    if obj.box3d is None:
        fields += ["-1.0", "-1.0", "-1.0", "-1000.0", "-1000.0", "-1000.0", "-10.0"]
    else:
        fields += [_fmt(v) for v in box_to_camera(obj.box3d, calib or Calibration.nominal())]
    if obj.score is not None:
        fields.append(_fmt(obj.score))
    return " ".join(fields)


def write_labels(path, objects: Iterable[LabeledObject],
                 calib: Optional[Calibration] = None) -> None:
    with open(path, "w") as fh:
        for obj in objects:
            fh.write(format_label_line(obj, calib) + "\n")


# -- rasters ----------------------------------------------------------------

@dataclass(frozen=True)
class Raster:
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != self.width * self.height:
            raise ValueError(
                f"raster has {vals.size} values, expected {self.width}x{self.height}")
        vals = vals.reshape(self.height, self.width)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


def read_raster(path, scale: float = 1.0) -> Raster:
    """Load a single-channel 8/16-bit PNG; physical value = stored / scale."""
    from PIL import Image, UnidentifiedImageError

    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if img.mode not in ("L", "I;16", "I;16B", "I;16L", "I"):
        raise UnsupportedFormat(f"{path}: mode {img.mode} is not single-channel 8/16-bit")
    stored = np.asarray(img, dtype=np.float64)
    if img.mode == "I" and stored.size and (stored.min() < 0 or stored.max() > 65535):
        raise UnsupportedFormat(f"{path}: values exceed 16 bits")
    return Raster(img.width, img.height, stored / float(scale))


def write_raster(path, stored: np.ndarray, bits: int = 16) -> None:
    """Write integer ``stored`` values as an 8- or 16-bit grayscale PNG."""
    from PIL import Image

    arr = np.asarray(stored)
    if bits == 8:
        img = Image.fromarray(arr.astype(np.uint8), mode="L")
    elif bits == 16:
        img = Image.fromarray(arr.astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    img.save(path, format="PNG")
