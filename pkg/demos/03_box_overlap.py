"""
Rotated box overlap and suppression
===================================
"""
import math

from ss3d import Box3D, Detection, iou_3d, iou_bev, nms_bev

a = Box3D(10.0, 0.0, -1.0, length=3.9, width=1.6, height=1.5, yaw=0.0)
print("identical:", iou_bev(a, a))

b = a.translated(1.0)
print("shifted 1 m along the heading:", round(iou_bev(a, b), 4))

c = Box3D(10.0, 0.0, -1.0, 3.9, 1.6, 1.5, math.pi / 4)
print("rotated 45 degrees:", round(iou_bev(a, c), 4))

# vertical offset lowers 3D overlap but leaves BEV overlap untouched
d = a.translated(0.0, 0.0, 0.5)
print("raised 0.5 m: bev", round(iou_bev(a, d), 4), "3d", round(iou_3d(a, d), 4))

dets = [Detection(a, "Car", 0.9), Detection(b, "Car", 0.8),
        Detection(a.translated(0.0, 5.0), "Car", 0.7)]
kept = nms_bev(dets, 0.5)
print("kept after NMS:", [round(k.score, 2) for k in kept])
