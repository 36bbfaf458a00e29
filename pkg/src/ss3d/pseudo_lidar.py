"""Back-projection of stereo disparity into sensor-frame point clouds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .ingest import Calibration, PointCloud, Raster

__all__ = ["ProjectionConfig", "disparity_to_depth", "disparity_to_cloud",
           "project_cloud_to_image"]


@dataclass(frozen=True)
class ProjectionConfig:
    max_depth: float = 80.0
    min_disparity: float = 1.0
    # no height cull by default; the pillar grid applies its own z range
    height_window: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if not self.max_depth > 0:
            raise ValueError("max_depth must be positive")
        if not self.min_disparity > 0:
            raise ValueError("min_disparity must be positive")
        if not self.height_window[0] < self.height_window[1]:
            raise ValueError("height_window must satisfy z_min < z_max")


def disparity_to_depth(disparity, calib: Calibration):
    """Depth in meters along the camera axis: ``focal_u * baseline / d``."""
    return calib.focal_u * calib.baseline / np.asarray(disparity, dtype=np.float64)


def disparity_to_cloud(disp: Raster, calib: Calibration,
                       cfg: ProjectionConfig = ProjectionConfig(),
                       seg: Optional[Raster] = None) -> PointCloud:
    """Turn a disparity raster into a point cloud in the sensor frame.

    Pixels with disparity <= ``cfg.min_disparity`` are skipped (0 marks an
    invalid pixel).  Without ``seg`` every point carries v = 1.0; with it, v
    is the segmentation value at the originating pixel.  Points come out in
    row-major pixel order.
    """
    if seg is not None and seg.shape != disp.shape:
        raise DimensionMismatch(f"segmentation {seg.shape} vs disparity {disp.shape}")
    d = disp.values
    rows, cols = np.nonzero(d > cfg.min_disparity)
    depth = disparity_to_depth(d[rows, cols], calib)
    keep = depth <= cfg.max_depth
    rows, cols, depth = rows[keep], cols[keep], depth[keep]

    cam = np.empty((depth.size, 3))
    cam[:, 0] = (cols - calib.center_u) * depth / calib.focal_u + calib.offset_u
    cam[:, 1] = (rows - calib.center_v) * depth / calib.focal_v + calib.offset_v
    cam[:, 2] = depth
    xyz = calib.to_sensor(cam)

    z0, z1 = cfg.height_window
    inside = (xyz[:, 2] >= z0) & (xyz[:, 2] <= z1)
    if seg is None:
        v = np.ones(depth.size)
    else:
        v = np.clip(seg.values[rows, cols], 0.0, 1.0)
    pts = np.column_stack([xyz, v])[inside]
    return PointCloud(pts)


def project_cloud_to_image(cloud: PointCloud, calib: Calibration) -> np.ndarray:
    """Project sensor-frame points to ``(u, v, depth)`` rows.

    Points at or behind the camera plane are omitted.
    """
    cam = calib.to_camera(cloud.xyz)
    cam = cam[cam[:, 2] > 0]
    uv = calib.project(cam)
    return np.column_stack([uv, cam[:, 2]])
