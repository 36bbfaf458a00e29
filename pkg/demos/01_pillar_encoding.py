"""
Encoding a point cloud into pillar features
===========================================

A synthetic scene (flat ground plus one car-sized blob) is binned into the
default 496 x 432 bird's-eye grid and summarised per pillar.
"""
import numpy as np

from ss3d import PillarGridConfig, PointCloud, encode
from ss3d.pillars import fc_encoder_macs, statistical_encoder_flops

rng = np.random.default_rng(0)

# ground returns across the field of view
ground = np.column_stack([rng.uniform(0, 69, 60000), rng.uniform(-39, 39, 60000),
                          rng.normal(-1.7, 0.03, 60000), rng.uniform(0.1, 0.3, 60000)])
# a 4 x 1.8 x 1.5 m object twenty metres ahead
car = np.column_stack([rng.uniform(18, 22, 4000), rng.uniform(-0.9, 0.9, 4000),
                       rng.uniform(-1.7, -0.2, 4000), rng.uniform(0.5, 0.9, 4000)])
cloud = PointCloud(np.vstack([ground, car]))

grid = PillarGridConfig()
print("grid:", grid.height, "x", grid.width, "pillars of", grid.cell, "m")

fmap = encode(cloud, grid)
print("points in range:", fmap.n_in_range, "of", fmap.n_points)
print("occupied pillars:", fmap.n_occupied)

# SS3D-6 channels: occupied, count, mean z, mean v, max z, v of highest point
row, col = int((0.0 + 39.68) / 0.16), int(20.0 / 0.16)
print("pillar under the object:", np.round(fmap.data[row, col], 3))

# the ten-channel variant adds pillar position and three height slices
fmap10 = encode(cloud, PillarGridConfig(variant="SS3D-10"))
print("SS3D-10 at same pillar:", np.round(fmap10.data[row, col], 3))

# cost of a learned per-point encoder versus these statistics
macs = fc_encoder_macs(12000, 100, 9, 64)
ops = statistical_encoder_flops(grid, len(cloud))
print(f"fully connected encoder: {macs:,} MACs; statistics: {ops:,} ops")
