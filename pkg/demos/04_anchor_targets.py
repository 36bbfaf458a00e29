"""
Anchors, targets and decoding
=============================

Anchors tile the grid every second cell in two orientations.  Each ground
truth box gets residuals relative to its matched anchors, and decoding
those residuals recovers the box.
"""
import numpy as np

from ss3d import Box3D, PillarGridConfig
from ss3d import anchors as ac

grid = PillarGridConfig()
anchors = ac.generate_anchors(grid)
print("anchors:", len(anchors), "first:", np.round(anchors.boxes[0], 3).tolist())

gt = Box3D(25.3, 4.1, -0.9, 4.2, 1.7, 1.5, 0.15)
ta = ac.assign_targets(anchors, [gt])
pos = ta.positives
print("positive anchors:", len(pos), "best IoU:", round(float(ta.max_iou.max()), 3))

k = int(pos[0])
print("residuals for anchor", k, ":", np.round(ta.regression[k], 4).tolist())
back = ac.decode_box(ta.regression[k], anchors.box(k), int(ta.direction[k]))
print("decoded:", np.round(back.as_array(), 6).tolist())
print("original:", np.round(gt.as_array(), 6).tolist())

# feeding the targets back as network output reproduces one detection
scores = np.where(ta.labels == ac.POSITIVE, 0.9, 0.0)
dets = ac.decode_predictions(scores, ta.regression, ta.direction, anchors)
print("detections after NMS:", len(dets), np.round(dets[0].box.as_array(), 3).tolist())
