"""Alignment correctness of registered point cloud pairs."""
from ._accel import backend_name, configure_threads
from .baselines import NdtGrid, build_ndt, extract_features_relndt, mme, ndt_score
from .classify import (
    FeatureVector,
    LabeledExample,
    LogisticModel,
    TrainConfig,
    Verdict,
    predict,
    train,
)
from .cloud import Label, PointCloud, RigidTransform, apply_transform, join, voxel_downsample
from .entropy import (
    Aggregation,
    EntropyParams,
    QualityResult,
    Status,
    coral_quality,
    dynamic_radius,
    extract_features_coral,
    overlap_ratio,
    point_entropy,
    sample_covariance,
)
from .fileio import load_cloud, load_poses, save_cloud, save_poses
from .spatial import SpatialIndex, radius_neighbors

__version__ = "0.1.0"
