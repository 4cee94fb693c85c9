"""scikit-learn style front end for the registration-based anomaly detector."""

from __future__ import annotations

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cloud_list, check_fraction, check_int
from .anomaly import AnomalyConfig, AnomalyResult, detect
from .config import BankConfig, PipelineConfig
from .descriptor import CloudFeatures, DescriptorConfig, describe
from .geometry import PointCloud, build_multiscale
from .memorybank import align_to_template, bank_from_aligned
from .registration import MatchingConfig, RansacConfig

__all__ = ["RegistrationAnomalyDetector", "describe_cloud"]


def describe_cloud(cloud: PointCloud, cfg: PipelineConfig) -> CloudFeatures:
    """Multi-scale decomposition plus built-in descriptors for one cloud."""
    ms = build_multiscale(cloud, min(cfg.target_fine, len(cloud)), cfg.coarse_factor)
    return describe(ms, cfg.descriptor)


class RegistrationAnomalyDetector(BaseEstimator):
    """Memory-bank anomaly detector that registers every sample onto a template.

    ``fit`` takes a list of normal point clouds; one of them (``template_index``)
    becomes the template, the others are registered onto it and their fused
    feature/coordinate rows are subsampled into the memory bank.  Scores are
    distances to the bank, so larger means more anomalous (the opposite sign
    of scikit-learn's outlier detectors).
    """

    def __init__(self, target_fine=4096, coarse_factor=8.0, neighbor_k=32, angle_bins=11, normal_k=16,
                 n_c=256, k=3, sinkhorn_iters=100, alpha=1.0, ransac_iters=50000, inlier_thresh=None,
                 ransac_confidence=0.999, ransac_seed=0, rate=0.1, bank_seed=0, template_index=0,
                 filter_k=8, smooth_n=9, n_jobs=1):
        self.target_fine = target_fine
        self.coarse_factor = coarse_factor
        self.neighbor_k = neighbor_k
        self.angle_bins = angle_bins
        self.normal_k = normal_k
        self.n_c = n_c
        self.k = k
        self.sinkhorn_iters = sinkhorn_iters
        self.alpha = alpha
        self.ransac_iters = ransac_iters
        self.inlier_thresh = inlier_thresh
        self.ransac_confidence = ransac_confidence
        self.ransac_seed = ransac_seed
        self.rate = rate
        self.bank_seed = bank_seed
        self.template_index = template_index
        self.filter_k = filter_k
        self.smooth_n = smooth_n
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, cfg: PipelineConfig, n_jobs=1):
        return cls(
            target_fine=cfg.target_fine, coarse_factor=cfg.coarse_factor,
            neighbor_k=cfg.descriptor.neighbor_k, angle_bins=cfg.descriptor.angle_bins,
            normal_k=cfg.descriptor.normal_k, n_c=cfg.matching.n_c, k=cfg.matching.k,
            sinkhorn_iters=cfg.matching.sinkhorn_iters, alpha=cfg.matching.alpha,
            ransac_iters=cfg.ransac.iters, inlier_thresh=cfg.ransac.inlier_thresh,
            ransac_confidence=cfg.ransac.confidence, ransac_seed=cfg.ransac.seed,
            rate=cfg.bank.rate, bank_seed=cfg.bank.seed, template_index=cfg.bank.template_index,
            filter_k=cfg.anomaly.filter_k, smooth_n=cfg.anomaly.smooth_n, n_jobs=n_jobs,
        )

    def to_config(self) -> PipelineConfig:
        return PipelineConfig(
            target_fine=self.target_fine,
            coarse_factor=self.coarse_factor,
            descriptor=DescriptorConfig(self.neighbor_k, self.angle_bins, self.normal_k),
            matching=MatchingConfig(self.n_c, self.k, self.sinkhorn_iters, self.alpha),
            ransac=RansacConfig(self.ransac_iters, self.inlier_thresh, self.ransac_confidence, self.ransac_seed),
            bank=BankConfig(self.rate, self.bank_seed, self.template_index),
            anomaly=AnomalyConfig(self.filter_k, self.smooth_n),
        )

    def _validate_params(self):
        check_int(self.target_fine, "target_fine", 1)
        check_int(self.template_index, "template_index", 0)
        check_int(self.filter_k, "filter_k", 2)
        check_int(self.smooth_n, "smooth_n", 1)
        check_fraction(self.rate, "rate")
        return self.to_config()

    def _map(self, fn, items):
        if self.n_jobs in (None, 1) or len(items) < 2:
            return [fn(x) for x in items]
        return Parallel(n_jobs=self.n_jobs)(delayed(fn)(x) for x in items)

    def fit(self, X, y=None):
        """Build the template and memory bank from normal clouds ``X``."""
        cfg = self._validate_params()
        clouds = check_cloud_list(X, "X")
        check_int(self.template_index, "template_index", 0, len(clouds) - 1)
        feats = self._map(lambda c: describe_cloud(c, cfg), clouds)
        transforms = align_to_template(feats, cfg.bank.template_index, cfg.matching, cfg.ransac)
        aligned = [(t.apply(f.ms.fine.points), f.local.data) for f, t in zip(feats, transforms)]
        self.bank_ = bank_from_aligned(aligned, rate=cfg.bank.rate, seed=cfg.bank.seed)
        self.template_ = feats[cfg.bank.template_index]
        self.train_transforms_ = transforms
        self.n_features_in_ = 3
        return self

    def detect(self, X) -> list:
        """Full :class:`~regad.anomaly.AnomalyResult` for every cloud in ``X``."""
        check_is_fitted(self, "bank_")
        cfg = self.to_config()
        clouds = check_cloud_list(X, "X")

        def run(c) -> AnomalyResult:
            return detect(describe_cloud(c, cfg), self.template_, self.bank_, cfg.anomaly,
                          matching=cfg.matching, ransac=cfg.ransac)

        return self._map(run, clouds)

    def score_samples(self, X) -> np.ndarray:
        """Object-level anomaly score per cloud."""
        return np.array([r.object_score for r in self.detect(X)])

    def score_points(self, X) -> list:
        """Per fine-point scores; pair with ``r.fine_points`` from :meth:`detect` for locations."""
        return [r.point_scores for r in self.detect(X)]
