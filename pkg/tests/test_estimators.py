import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline

from defrost import DenseClassifier, Standardizer


def test_dense_classifier_api(blobs):
    X, y = blobs
    labels = np.where(y == 1, 7, 3)
    clf = DenseClassifier(hidden=(8,), epochs=10, batch_size=32)
    assert clf.fit(X, labels) is clf
    assert set(clf.predict(X)) <= {3, 7}
    assert clf.score(X, labels) >= 0.99
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.transform(X, layer=1).shape == (len(X), 8)


def test_dense_classifier_params_and_clone():
    clf = DenseClassifier(hidden=(4, 4), lr=0.01)
    params = clf.get_params()
    assert params["hidden"] == (4, 4) and params["lr"] == 0.01
    assert clone(clf).set_params(epochs=2).epochs == 2


def test_dense_classifier_requires_fit():
    with pytest.raises(NotFittedError):
        DenseClassifier().predict(np.zeros((1, 2)))


def test_dense_classifier_is_deterministic(blobs):
    X, y = blobs
    a = DenseClassifier(epochs=3, random_state=1).fit(X, y)
    b = DenseClassifier(epochs=3, random_state=1).fit(X, y)
    assert a.params_.equals(b.params_)


def test_pipeline_and_cross_validation(blobs):
    X, y = blobs
    pipe = make_pipeline(Standardizer(), DenseClassifier(hidden=(8,), epochs=5, batch_size=32))
    assert cross_val_score(pipe, X, y, cv=3).min() >= 0.95


def test_input_validation():
    with pytest.raises(ValueError):
        DenseClassifier().fit(np.array([[np.nan, 1.0], [0.0, 1.0]]), [0, 1])
    with pytest.raises(ValueError):
        DenseClassifier().fit(np.zeros((3, 2)), [0, -1, 1])
