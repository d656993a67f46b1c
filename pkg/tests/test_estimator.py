import numpy as np
import pytest
from sklearn.base import clone

from vehiclemae.data import PretrainData
from vehiclemae.estimator import VehicleMAEPretrainer, check_annotations, check_images
from vehiclemae.exceptions import ValidationError
from vehiclemae.geometry import Annotation


@pytest.fixture(scope="module")
def data():
    return PretrainData.synthetic(8, seed=4)


def test_params_round_trip():
    est = VehicleMAEPretrainer(epochs=1, mask_ratio=0.5, random_state=3)
    params = est.get_params()
    assert params["epochs"] == 1 and params["mask_ratio"] == 0.5 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(epochs=2)
    assert est.epochs == 2


def test_fit_transform(data):
    est = VehicleMAEPretrainer(epochs=1, batch_size=4, random_state=0)
    feats = est.fit(data.images, annotations=data.annotations, corpus=data.corpus).transform(data.images)
    assert feats.shape == (8, 64) and np.isfinite(feats).all()
    assert len(est.metrics_) == 2
    assert est.get_feature_names_out().shape == (64,)
    again = clone(est).fit(data.images, annotations=data.annotations, corpus=data.corpus).transform(data.images)
    assert np.array_equal(feats, again)


def test_fit_without_annotations_uses_random_masks(data):
    est = VehicleMAEPretrainer(epochs=1, batch_size=8).fit(data.images)
    assert est.metrics_[0]["strategies"] == {"RANDOM": 8}
    assert est.metrics_[0]["l_vt"] == 0.0


def test_transform_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        VehicleMAEPretrainer().transform(np.zeros((1, 64, 64, 3)))


def test_check_images():
    assert check_images(np.zeros((64, 64, 3))).shape == (1, 64, 64, 3)
    for bad in (np.zeros((2, 64, 64)), np.zeros((0, 64, 64, 3)), np.full((1, 64, 64, 3), 2.0), np.full((1, 64, 64, 3), np.nan)):
        with pytest.raises(ValidationError):
            check_images(bad)
    with pytest.raises(ValidationError):
        check_images(np.zeros((1, 32, 32, 3)), image_size=64)


def test_check_annotations():
    anns = check_annotations([None, {"box": [0, 0, 10, 10]}, Annotation((0, 0, 5, 5), 30)], 3, 64, 64)
    assert [a.kind.value for a in anns] == ["NONE", "BOX_ONLY", "BOX_AND_ANGLE"]
    with pytest.raises(ValidationError):
        check_annotations([None], 2, 64, 64)
    with pytest.raises(ValidationError):
        check_annotations([{"box": [0, 0, 100, 10]}], 1, 64, 64)
    with pytest.raises(ValidationError):
        check_annotations(["box"], 1, 64, 64)
