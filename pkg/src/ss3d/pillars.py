"""Statistical pillar encoding of point clouds.

A point cloud is binned into a bird's-eye-view grid of vertical pillars and
each occupied pillar is summarised by a handful of order statistics (count,
mean/max height, mean v, v of the highest point, and optionally the pillar
polar position and per-slice maximum heights).  The result is a dense
``H x W x C`` tensor that a 2D convolutional detector can consume directly.

Rows index the lateral axis (y), columns the forward axis (x).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ingest import PointCloud

__all__ = [
    "VARIANTS",
    "PillarGridConfig",
    "PillarStats",
    "FeatureMap",
    "pillar_index",
    "encode",
    "encode_oracle",
    "fc_encoder_macs",
    "statistical_encoder_flops",
    "STAT_OPS_PER_POINT",
    "STAT_OPS_PER_PILLAR",
    "write_feature_map",
    "read_feature_map",
]

VARIANTS = {"SS3D-6": 6, "SS3D-10": 10, "SS3D-Seg-6": 6, "SS3D-Seg-10": 10}

CHANNELS_6 = ("occupied", "count", "mean_height", "mean_v", "max_height", "v_of_highest")
CHANNELS_10 = ("count", "mean_height", "mean_v", "max_height", "v_of_highest",
               "center_distance", "center_angle", "slice_max_0", "slice_max_1", "slice_max_2")

# cost model constants, declared rather than measured
STAT_OPS_PER_POINT = 12
STAT_OPS_PER_PILLAR = 10


def _cells(lo: float, hi: float, cell: float, axis: str) -> int:
    n = (hi - lo) / cell
    if not (n > 0 and abs(n - round(n)) <= 1e-9 * max(1.0, n)):
        raise ValueError(f"{axis} range {hi - lo} is not a whole number of {cell} m cells")
    return int(round(n))


@dataclass(frozen=True)
class PillarGridConfig:
    x_range: tuple[float, float] = (0.0, 69.12)
    y_range: tuple[float, float] = (-39.68, 39.68)
    z_range: tuple[float, float] = (-3.0, 1.0)
    cell: float = 0.16
    variant: str = "SS3D-6"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if not self.cell > 0:
            raise ValueError("cell size must be positive")
        if not self.z_range[0] < self.z_range[1]:
            raise ValueError("z_range must be increasing")
        _cells(*self.x_range, self.cell, "x")
        _cells(*self.y_range, self.cell, "y")

    @property
    def width(self) -> int:
        return _cells(*self.x_range, self.cell, "x")

    @property
    def height(self) -> int:
        return _cells(*self.y_range, self.cell, "y")

    @property
    def channels(self) -> int:
        return VARIANTS[self.variant]

    @property
    def pillar_height(self) -> float:
        return self.z_range[1] - self.z_range[0]

    @property
    def num_pillars(self) -> int:
        return self.width * self.height

    @property
    def is_seg(self) -> bool:
        return self.variant.startswith("SS3D-Seg")

    def _edges(self, lo, hi, n):
        # snapped to 1e-9 so that nominal boundaries like y = 0.0 are exact
        e = np.round(lo + np.arange(n + 1) * self.cell, 9)
        e[-1] = hi
        return e

    @property
    def x_edges(self) -> np.ndarray:
        return self._edges(*self.x_range, self.width)

    @property
    def y_edges(self) -> np.ndarray:
        return self._edges(*self.y_range, self.height)

    @property
    def slice_bounds(self) -> tuple[float, float]:
        z0 = self.z_range[0]
        h = self.pillar_height
        return z0 + h / 3.0, z0 + 2.0 * h / 3.0

    def with_variant(self, variant: str) -> "PillarGridConfig":
        return PillarGridConfig(self.x_range, self.y_range, self.z_range, self.cell, variant)


@dataclass(frozen=True)
class PillarStats:
    count: int
    mean_height: float
    mean_v: float
    max_height: float
    v_of_highest: float
    slice_max_heights: tuple[float, float, float]
    center_distance: float
    center_angle: float

    def feature_vector(self, variant: str) -> list[float]:
        if VARIANTS[variant] == 6:
            return [1.0, float(self.count), self.mean_height, self.mean_v,
                    self.max_height, self.v_of_highest]
        return [float(self.count), self.mean_height, self.mean_v, self.max_height,
                self.v_of_highest, self.center_distance, self.center_angle,
                *self.slice_max_heights]


@dataclass
class FeatureMap:
    """Dense ``height x width x channels`` pillar features (float64 in memory)."""

    data: np.ndarray
    variant: str
    n_points: int = 0
    n_in_range: int = 0

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != VARIANTS[self.variant]:
            raise ValueError(f"data shape {self.data.shape} does not match {self.variant}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def channel_names(self) -> tuple[str, ...]:
        return CHANNELS_6 if self.channels == 6 else CHANNELS_10

    @property
    def occupancy(self) -> np.ndarray:
        count_ch = 1 if self.channels == 6 else 0
        return self.data[:, :, count_ch] > 0

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())


def pillar_index(x: float, y: float, cfg: PillarGridConfig) -> Optional[tuple[int, int]]:
    """Grid cell ``(row, col)`` containing ``(x, y)``; min edges inclusive, max exclusive.

    The vertical extent is not checked here.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        return None
    xe, ye = cfg.x_edges, cfg.y_edges
    if not (xe[0] <= x < xe[-1] and ye[0] <= y < ye[-1]):
        return None
    col = int(np.searchsorted(xe, x, side="right")) - 1
    row = int(np.searchsorted(ye, y, side="right")) - 1
    return row, col


def encode(cloud: PointCloud, cfg: PillarGridConfig = PillarGridConfig()) -> FeatureMap:
    """Encode ``cloud`` into the dense feature tensor for ``cfg.variant``.

    Points outside the grid or the closed z range are ignored.  When several
    points in a pillar share the maximum height, ``v_of_highest`` comes from
    the one latest in input order.  Empty height slices report 0.
    """
    H, W, C = cfg.height, cfg.width, cfg.channels
    out = np.zeros((H, W, C))
    pts = cloud.points
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    xe, ye = cfg.x_edges, cfg.y_edges
    z0, z1 = cfg.z_range
    inr = (x >= xe[0]) & (x < xe[-1]) & (y >= ye[0]) & (y < ye[-1]) & (z >= z0) & (z <= z1)
    idx = np.flatnonzero(inr)
    fmap = FeatureMap(out, cfg.variant, n_points=len(cloud), n_in_range=int(idx.size))
    if idx.size == 0:
        return fmap

    col = _bin(x[idx], xe, cfg.cell)
    row = _bin(y[idx], ye, cfg.cell)
    flat = row * W + col
    zi = z[idx]
    vi = pts[idx, 3]
    P = H * W

    # work on occupied pillars only; ``k`` is each point's compact pillar id
    cells, k = np.unique(flat, return_inverse=True)
    m = cells.size
    n = np.bincount(k, minlength=m).astype(np.float64)
    mean_z = np.bincount(k, weights=zi, minlength=m) / n
    mean_v = np.bincount(k, weights=vi, minlength=m) / n
    max_z = np.full(m, -np.inf)
    np.maximum.at(max_z, k, zi)
    # among points at the pillar maximum keep the latest in input order
    at_top = zi == max_z[k]
    last = np.full(m, -1)
    np.maximum.at(last, k[at_top], np.flatnonzero(at_top))
    v_hi = vi[last]

    flat_out = out.reshape(P, C)
    if C == 6:
        flat_out[cells] = np.column_stack([np.ones_like(n), n, mean_z, mean_v, max_z, v_hi])
        return fmap

    r, c = cells // W, cells % W
    xc = 0.5 * (xe[c] + xe[c + 1])
    yc = 0.5 * (ye[r] + ye[r + 1])
    b1, b2 = cfg.slice_bounds
    sl = (zi >= b1).astype(np.int64) + (zi >= b2)
    slices = np.full(m * 3, -np.inf)
    np.maximum.at(slices, k * 3 + sl, zi)
    slices = slices.reshape(m, 3)
    slices[np.isneginf(slices)] = 0.0
    flat_out[cells] = np.column_stack([
        n, mean_z, mean_v, max_z, v_hi,
        np.hypot(xc, yc), np.arctan2(yc, xc), slices,
    ])
    return fmap


def _bin(coord: np.ndarray, edges: np.ndarray, cell: float) -> np.ndarray:
    """Index k with ``edges[k] <= coord < edges[k + 1]`` for in-range coords."""
    k = np.floor((coord - edges[0]) / cell).astype(np.int64)
    np.clip(k, 0, edges.size - 2, out=k)
    # the float division can land one cell off right at an edge
    k -= coord < edges[k]
    k += coord >= edges[k + 1]
    return k


def encode_oracle(cloud: PointCloud, cfg: PillarGridConfig = PillarGridConfig()) -> FeatureMap:
    """Slow reference encoder sharing no binning code with :func:`encode`.

    Every point is compared against every column and row lower edge, and
    the upper edge of the chosen interval is checked explicitly; per-pillar statistics are then accumulated with
    plain Python loops in input order.
    """
    x_lo, x_hi = cfg.x_range
    y_lo, y_hi = cfg.y_range
    z_lo, z_hi = cfg.z_range
    W = int(round((x_hi - x_lo) / cfg.cell))
    H = int(round((y_hi - y_lo) / cfg.cell))
    xb = [round(x_lo + k * cfg.cell, 9) for k in range(W)] + [x_hi]
    yb = [round(y_lo + k * cfg.cell, 9) for k in range(H)] + [y_hi]
    xl, xr = np.array(xb[:-1]), np.array(xb[1:])
    yl, yr = np.array(yb[:-1]), np.array(yb[1:])

    pts = cloud.points
    members: dict[tuple[int, int], list[int]] = {}
    if len(pts):
        cand = np.flatnonzero((pts[:, 2] >= z_lo) & (pts[:, 2] <= z_hi))
        px, py = pts[cand, 0], pts[cand, 1]
        # index of the last lower edge at or below the coordinate, then the
        # upper edge of that interval checked explicitly
        col = np.count_nonzero(px[:, None] >= xl[None, :], axis=1) - 1
        row = np.count_nonzero(py[:, None] >= yl[None, :], axis=1) - 1
        ok = (col >= 0) & (row >= 0)
        ok &= (px < xr[np.maximum(col, 0)]) & (py < yr[np.maximum(row, 0)])
        col_of = col.tolist()
        row_of = row.tolist()
        src = cand.tolist()
        for j in np.flatnonzero(ok).tolist():
            members.setdefault((row_of[j], col_of[j]), []).append(src[j])

    h = z_hi - z_lo
    cut1, cut2 = z_lo + h / 3.0, z_lo + 2.0 * h / 3.0
    channels = VARIANTS[cfg.variant]
    out = np.zeros((H, W, channels))
    rows_z = pts[:, 2].tolist()
    rows_v = pts[:, 3].tolist()
    cells, feats = [], []
    for (r, c), ids in members.items():
        zsum = vsum = 0.0
        zmax, vmax = -math.inf, 0.0
        smax = [None, None, None]
        for i in ids:
            zi, vi = rows_z[i], rows_v[i]
            zsum += zi
            vsum += vi
            if zi >= zmax:
                zmax, vmax = zi, vi
            s = 0 if zi < cut1 else (1 if zi < cut2 else 2)
            if smax[s] is None or zi > smax[s]:
                smax[s] = zi
        n = len(ids)
        xc = (xb[c] + xb[c + 1]) / 2.0
        yc = (yb[r] + yb[r + 1]) / 2.0
        slices = [0.0 if m is None else m for m in smax]
        if channels == 6:
            feat = [1.0, float(n), zsum / n, vsum / n, zmax, vmax]
        else:
            feat = [float(n), zsum / n, vsum / n, zmax, vmax,
                    math.sqrt(xc * xc + yc * yc), math.atan2(yc, xc), *slices]
        cells.append((r, c))
        feats.append(feat)
    if cells:
        rr, cc = zip(*cells)
        out[list(rr), list(cc)] = feats
    n_in = sum(len(v) for v in members.values())
    return FeatureMap(out, cfg.variant, n_points=len(pts), n_in_range=n_in)


def fc_encoder_macs(num_pillars: int, points_per_pillar: int,
                    in_features: int, out_features: int) -> int:
    """Multiply-accumulates of a per-point fully connected pillar encoder."""
    for name, val in (("num_pillars", num_pillars), ("points_per_pillar", points_per_pillar),
                      ("in_features", in_features), ("out_features", out_features)):
        if val <= 0:
            raise ValueError(f"{name} must be positive")
    return num_pillars * points_per_pillar * in_features * out_features


def statistical_encoder_flops(cfg: PillarGridConfig, n_points: int) -> int:
    """Modelled operation count of :func:`encode` on ``n_points`` points.

    ``STAT_OPS_PER_POINT`` covers binning and the accumulator updates;
    ``STAT_OPS_PER_PILLAR`` covers finalisation of each occupied pillar,
    bounded above by ``min(n_points, num_pillars)``.
    """
    if n_points < 0:
        raise ValueError("n_points must be non-negative")
    occupied_bound = min(n_points, cfg.num_pillars)
    return STAT_OPS_PER_POINT * n_points + STAT_OPS_PER_PILLAR * occupied_bound


# -- PFT1 -------------------------------------------------------------------

PFT1_MAGIC = b"PFT1"


def write_feature_map(path, fmap: FeatureMap) -> None:
    """Write ``fmap`` as PFT1: magic, ``H W C variant`` header line, f32 LE payload."""
    header = f"{fmap.height} {fmap.width} {fmap.channels} {fmap.variant}\n".encode("ascii")
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(PFT1_MAGIC)
        fh.write(header)
        fh.write(payload)


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PFT1_MAGIC:
        raise ValueError(f"{path}: not a PFT1 file")
    nl = raw.index(b"\n", 4)
    h, w, c, variant = raw[4:nl].decode("ascii").split()
    h, w, c = int(h), int(w), int(c)
    body = raw[nl + 1:]
    if len(body) != h * w * c * 4:
        raise ValueError(f"{path}: payload has {len(body)} bytes, expected {h * w * c * 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
    return FeatureMap(data, variant)
