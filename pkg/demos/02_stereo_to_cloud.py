"""
Pseudo-LiDAR from a disparity map
=================================

Disparity turns into depth through depth = focal * baseline / disparity; each
pixel is then back-projected and moved into the sensor frame.
"""
import numpy as np

from ss3d import Calibration, encode, PillarGridConfig
from ss3d.ingest import Raster
from ss3d.pseudo_lidar import disparity_to_cloud, disparity_to_depth, project_cloud_to_image

calib = Calibration.nominal(center_u=620.0, center_v=188.0)
print("focal", calib.focal_u, "baseline", calib.baseline)
print("disparity 10 px ->", round(float(disparity_to_depth(10.0, calib)), 3), "m")

# a tilted plane: disparity shrinks towards the top of the image
h, w = 375, 1242
rows = np.arange(h)[:, None].repeat(w, axis=1)
disp = Raster(w, h, np.clip(rows - 150.0, 0, None) * 0.4)
cloud = disparity_to_cloud(disp, calib)
print("points:", len(cloud), "nearest x:", round(cloud.xyz[:, 0].min(), 2), "m")

# without a segmentation mask the reflectance channel is 1 everywhere
print("unique v:", np.unique(cloud.v))

# a mask travels along as v
mask = Raster(w, h, (np.arange(w)[None, :] > w // 2).repeat(h, axis=0).astype(float))
seg_cloud = disparity_to_cloud(disp, calib, seg=mask)
print("fraction with v=1:", round(float(seg_cloud.v.mean()), 3))

# projecting back lands on the source pixel centres
uvd = project_cloud_to_image(cloud, calib)
print("first three (u, v, depth):", np.round(uvd[:3], 4).tolist())

fmap = encode(cloud, PillarGridConfig())
print("occupied pillars from stereo:", fmap.n_occupied)
