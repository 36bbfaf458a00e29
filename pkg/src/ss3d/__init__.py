"""Statistical pillar encoding, box geometry, anchor coding and KITTI scoring
for single-shot 3D object detection from LiDAR or stereo point clouds."""

from .box_geom import Box3D, Detection, iou_2d_axis_aligned, iou_3d, iou_bev, nms_bev
from .ingest import (
    Calibration,
    LabeledObject,
    PointCloud,
    Raster,
    read_calibration,
    read_labels,
    read_point_cloud,
    read_raster,
    write_labels,
    write_point_cloud,
)
from .pillars import (
    FeatureMap,
    PillarGridConfig,
    encode,
    encode_oracle,
    fc_encoder_macs,
    pillar_index,
    statistical_encoder_flops,
)
from .pseudo_lidar import ProjectionConfig, disparity_to_cloud, project_cloud_to_image
from .anchors import (
    AnchorConfig,
    assign_targets,
    decode_box,
    encode_box,
    generate_anchors,
)
from .kitti_eval import EvalConfig, EvalReport, evaluate

__version__ = "0.1.0"
