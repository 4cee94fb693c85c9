"""Rotation-robust point-cloud anomaly detection by registration onto a template.

Every sample is registered to a normal template with a coarse-to-fine
matcher (patch correlation, optimal-transport point matching, RANSAC) and then
compared, in template coordinates, against a memory bank of normal features.
"""

from .anomaly import AnomalyConfig, AnomalyResult, detect, filter_mask, propagate_scores, smooth_scores
from .config import PipelineConfig
from .descriptor import CloudFeatures, DescriptorConfig, FeatureMatrix, compute_local_features, describe
from .estimator import RegistrationAnomalyDetector
from .evaluation import auroc, o_auroc, p_auroc, roc_curve
from .exceptions import DegenerateLabelsError, FeatureFormatError, RegadError, RegistrationError
from .geometry import MultiScaleCloud, PointCloud, RigidTransform, build_multiscale, voxel_downsample
from .memorybank import MemoryBank, build_bank, coreset_greedy
from .registration import MatchingConfig, RansacConfig, register, registration_error

__version__ = "0.1.0"

__all__ = [
    "AnomalyConfig", "AnomalyResult", "detect", "filter_mask", "propagate_scores", "smooth_scores",
    "PipelineConfig", "CloudFeatures", "DescriptorConfig", "FeatureMatrix", "compute_local_features",
    "describe", "RegistrationAnomalyDetector", "auroc", "o_auroc", "p_auroc", "roc_curve",
    "DegenerateLabelsError", "FeatureFormatError", "RegadError", "RegistrationError",
    "MultiScaleCloud", "PointCloud", "RigidTransform", "build_multiscale", "voxel_downsample",
    "MemoryBank", "build_bank", "coreset_greedy", "MatchingConfig", "RansacConfig", "register",
    "registration_error",
]
