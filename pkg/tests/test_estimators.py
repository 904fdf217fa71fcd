import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ccot.estimators import BackAndForthCCE, ClassicCE, CollectiveCE
from ccot.measures import sample_region, two_blob_mixture
from ccot.sinkhorn import recommend_all


@pytest.fixture(scope="module")
def clouds():
    rng = np.random.Generator(np.random.PCG64(7))
    return rng.uniform(0, 0.5, size=(30, 2)), rng.uniform(0.5, 1, size=(25, 2))


@pytest.mark.parametrize("est", [ClassicCE(), CollectiveCE(solver="unbalanced", lambda2=0.3),
                                 BackAndForthCCE(max_iters=10)])
def test_params_round_trip(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(**params)


@pytest.mark.parametrize("est", [ClassicCE(), CollectiveCE(), BackAndForthCCE()])
def test_not_fitted(est, clouds):
    with pytest.raises(NotFittedError):
        est.transform(clouds[0])


def test_classic_matches_nearest(clouds):
    X, Y = clouds
    est = ClassicCE().fit(X, Y)
    d = np.linalg.norm(X[:, None] - Y[None], axis=2)
    np.testing.assert_array_equal(est.predict(X), d.argmin(1))
    np.testing.assert_array_equal(est.transform(X), Y[d.argmin(1)])


@pytest.mark.parametrize("solver", ["sinkhorn", "unbalanced"])
def test_collective_predict_matches_plan(clouds, solver):
    X, Y = clouds
    est = CollectiveCE(solver=solver, lambda2=0.5).fit(X, Y)
    np.testing.assert_array_equal(est.predict(X), recommend_all(est.plan_))
    assert est.epsilon_ == pytest.approx(0.01 * np.linalg.norm(X[:, None] - Y[None], axis=2).mean())


def test_collective_serves_new_points(clouds):
    X, Y = clouds
    est = CollectiveCE().fit(X, Y)
    out = est.transform(np.array([[0.1, 0.1], [0.4, 0.2]]))
    assert out.shape == (2, 2)
    assert np.all(np.isin(out, Y))


def test_unbalanced_lambda2_zero_is_classic(clouds):
    X, Y = clouds
    est = CollectiveCE(solver="unbalanced", lambda2=0.0, epsilon_scale=1e-3).fit(X, Y)
    assert np.mean(est.predict(X) == ClassicCE().fit(X, Y).predict(X)) >= 0.95


def test_input_validation(clouds):
    X, Y = clouds
    with pytest.raises(ValueError):
        CollectiveCE(solver="exact").fit(X, Y)
    with pytest.raises(ValueError):
        ClassicCE().fit(np.ones((3, 3)), Y)
    with pytest.raises(ValueError):
        CollectiveCE().fit(X, Y, sample_weight=np.ones(3))
    with pytest.raises(TypeError):
        BackAndForthCCE().fit(X, Y)


def test_back_and_forth_estimator(instance32):
    est = BackAndForthCCE().fit(instance32.source, instance32.target)
    assert est.potentials_.converged
    pts = sample_region(two_blob_mixture(), 20, 0, lambda x: x.sum(1) < 0.8,
                        instance32.domain).points
    out = est.transform(pts)
    assert out.shape == (20, 2)
    assert np.all(instance32.domain.contains(out))
