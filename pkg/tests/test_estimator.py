import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from regad import RegistrationAnomalyDetector
from regad.config import PipelineConfig
from regad.exceptions import RegadError
from regad.geometry import random_rigid
from regad.synth import make_anomalous, make_normal, nominal_spacing


def test_params_and_clone():
    est = RegistrationAnomalyDetector(target_fine=1024, rate=0.2)
    params = est.get_params()
    assert params["target_fine"] == 1024 and params["rate"] == 0.2
    twin = clone(est)
    assert twin.get_params() == params
    cfg = est.to_config()
    assert isinstance(cfg, PipelineConfig)
    assert RegistrationAnomalyDetector.from_config(cfg).get_params() == params


def test_invalid_params():
    with pytest.raises(RegadError):
        RegistrationAnomalyDetector(rate=0.0).fit([np.zeros((10, 3))])
    with pytest.raises(RegadError):
        RegistrationAnomalyDetector(template_index=3).fit([make_normal("sphere-bumps", 500, 0).points])


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RegistrationAnomalyDetector().score_samples([np.zeros((10, 3))])


def test_fit_and_score():
    train = [make_normal("sphere-bumps", 3000, s).points for s in range(3)]
    est = RegistrationAnomalyDetector(target_fine=1536).fit(train)
    assert est.n_features_in_ == 3 and len(est.train_transforms_) == 3
    spacing = nominal_spacing("sphere-bumps", 1536)
    bad = make_anomalous("sphere-bumps", 3000, 50, spacing=spacing, magnitude=(10.0, 10.0)).points
    good = random_rigid(1, np.pi, 0.5).apply(make_normal("sphere-bumps", 3000, 51).points)
    scores = est.score_samples([good, bad])
    assert scores[1] > scores[0]
    pts = est.score_points([bad])
    assert pts[0].shape == (est.detect([bad])[0].fine_points.shape[0],)


def test_validation_helpers():
    from regad._validation import check_cloud, check_cloud_list, check_fraction, check_int
    from regad.exceptions import EmptyInputError

    assert len(check_cloud_list(np.zeros((4, 3)))) == 1
    with pytest.raises(RegadError):
        check_cloud(np.zeros((4, 2)))
    with pytest.raises(RegadError):
        check_cloud([[0.0, np.inf, 0.0]])
    with pytest.raises(EmptyInputError):
        check_cloud_list([])
    assert check_int(3, "n", 1, 5) == 3
    with pytest.raises(RegadError):
        check_int(2.5, "n")
    with pytest.raises(RegadError):
        check_fraction(1.5, "rate")
