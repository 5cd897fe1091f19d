"""LiDAR-only odometry and mapping with two-stage plane-to-plane GICP."""

from .config import PipelineConfig
from .core import PointCloud, RigidTransform, compose, invert, rotation_angle_deg, transform_cloud, twist_exp, twist_log
from .evaluation import Trajectory, associate, ate_rmse, endpoint_distance, timing_summary
from .mapping import MapUpdatePolicy, OctreeMap, consistency_filter, insert_keyframe, map_update_due, motion_stable
from .odometry import FrameResult, Odometry, OdometryState, extract_local_submap, process_frame
from .registration import GicpParams, NeighborIndex, gicp_align

__version__ = "0.1.0"
