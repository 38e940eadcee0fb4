"""Scene flow on pseudo-LiDAR point clouds by direct loss minimisation."""

from .camera import (
    CameraIntrinsics,
    DepthMap,
    DisparityMap,
    backproject_depth_map,
    bilinear_sample,
    disparity_to_depth,
    project_points,
)
from .cloud import CropBox, NNIndex, OutlierParams, PointCloud, build_index, crop_edges, knn, random_sample, remove_outliers
from .losses import (
    LossReport,
    LossWeights,
    chamfer_loss,
    disparity_consistency_loss,
    laplacian_loss,
    laplacian_vector,
    smooth_l1_depth_error,
    smoothness_loss,
    total_loss,
    warp,
)
from .metrics import MetricsReport, evaluate, evaluate_2d, evaluate_3d
from .solver import SolverConfig, SolveTrace, build_pyramid, solve, upsample_flow
from .synth import SceneSpec, SyntheticFrame, generate, plant_outliers

__version__ = "0.1.0"
