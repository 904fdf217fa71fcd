import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccot.classifier import ScoreFunction, grid_scores
from ccot.exceptions import InfeasibleError
from ccot.measures import (DiscreteMeasure, Domain, GaussianMixture, GridDensity, discretize,
                           gmm_pdf, load_discrete_measure, load_grid_density, restrict_points,
                           sample, sample_region, save_discrete_measure, save_grid_density,
                           truncate, two_blob_mixture)


def _normal_2d(x, mean, var):
    # independent closed form for a diagonal covariance
    q = sum((xi - mi) ** 2 / vi for xi, mi, vi in zip(x, mean, var))
    return math.exp(-0.5 * q) / (2 * math.pi * math.sqrt(var[0] * var[1]))


class TestDomain:
    def test_geometry(self):
        d = Domain(0.0, 2.0, -1.0, 1.0, nx=4, ny=8)
        assert d.cell_area == pytest.approx(0.5 * 0.25)
        np.testing.assert_allclose(d.x_centers, [0.25, 0.75, 1.25, 1.75])
        assert np.allclose(np.diff(d.y_centers), d.dy)

    @pytest.mark.parametrize("kwargs", [dict(x_min=1.0, x_max=0.0), dict(nx=1), dict(ny=0)])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Domain(**kwargs)

    def test_cell_index_round_trip(self):
        d = Domain(nx=5, ny=7)
        i, j = d.cell_index(d.center_points())
        X, Y = np.meshgrid(np.arange(5), np.arange(7), indexing="ij")
        np.testing.assert_array_equal(i, X.ravel())
        np.testing.assert_array_equal(j, Y.ravel())


class TestMixture:
    def test_symmetric_midpoint(self):
        g = two_blob_mixture()
        expected = 2 * 0.5 * _normal_2d([0.5, 0.5], [0.3, 0.3], [0.2, 0.2])
        assert gmm_pdf(g, [0.5, 0.5]) == pytest.approx(expected, rel=1e-14)

    def test_single_component_peak(self):
        g = GaussianMixture.from_diagonal([[0.1, 0.4]], [[0.3, 0.05]])
        assert gmm_pdf(g, [0.1, 0.4]) == pytest.approx(1 / (2 * math.pi * math.sqrt(0.3 * 0.05)))

    def test_origin_hand_evaluation(self):
        # quadratic forms: (0.09 + 0.09) / 0.2 = 0.9 and (0.49 + 0.49) / 0.2 = 4.9
        expected = 0.5 * (math.exp(-0.45) + math.exp(-2.45)) / (2 * math.pi * 0.2)
        assert gmm_pdf(two_blob_mixture(), [0.0, 0.0]) == pytest.approx(expected, rel=1e-14)

    def test_std_reading_squares_the_diagonal(self):
        a = two_blob_mixture(diag_is_std=True)
        np.testing.assert_allclose(a.covariances[0], np.diag([0.04, 0.04]))

    def test_vectorized_matches_pointwise(self, rng):
        g = two_blob_mixture()
        pts = rng.uniform(size=(20, 2))
        np.testing.assert_allclose(gmm_pdf(g, pts), [gmm_pdf(g, p) for p in pts])

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.0, 0.0]])
    def test_rejects_bad_weights(self, weights):
        with pytest.raises(ValueError):
            GaussianMixture.from_diagonal([[0, 0], [1, 1]], [[1, 1], [1, 1]], weights)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            GaussianMixture.from_diagonal([[0, 0]], [[0.0, 1.0]])


class TestDiscretize:
    def test_probability(self):
        P = discretize(two_blob_mixture(), Domain())
        assert P.total == pytest.approx(1.0, abs=1e-12)
        assert np.all(P.mass >= 0)
        assert 0 < P.info["normalization"] < 1

    def test_flat_limit(self):
        g = GaussianMixture.from_diagonal([[0.5, 0.5]], [[1e6, 1e6]])
        P = discretize(g, Domain(nx=16, ny=16))
        assert P.mass.max() / P.mass.min() == pytest.approx(1.0, abs=1e-6)

    def _block_around(self, P, point):
        i, j = P.domain.cell_index(np.array([point]))
        i, j = int(i[0]), int(j[0])
        return P.mass[i, j], P.mass[i - 1:i + 2, j - 1:j + 2]

    def test_local_maximum_near_first_mean_std_reading(self):
        P = discretize(two_blob_mixture(diag_is_std=True), Domain())
        center, block = self._block_around(P, [0.3, 0.3])
        assert center == block.max()

    def test_variance_reading_is_unimodal(self):
        # blobs 0.57 apart with sigma 0.45 merge into one central mode
        P = discretize(two_blob_mixture(), Domain())
        center, block = self._block_around(P, [0.3, 0.3])
        assert center < block.max()
        assert np.unravel_index(P.mass.argmax(), P.mass.shape) in {(31, 31), (31, 32),
                                                                    (32, 31), (32, 32)}

    def test_degenerate(self):
        g = GaussianMixture.from_diagonal([[100.0, 100.0]], [[1e-4, 1e-4]])
        with pytest.raises(InfeasibleError, match="degenerate discretization"):
            discretize(g, Domain(nx=8, ny=8))

    @given(mx=st.floats(-1, 2), my=st.floats(-1, 2), v=st.floats(0.01, 5))
    def test_always_a_probability(self, mx, my, v):
        g = GaussianMixture.from_diagonal([[mx, my]], [[v, v]])
        P = discretize(g, Domain(nx=12, ny=9))
        assert np.all(P.mass >= 0)
        assert abs(P.total - 1) <= 1e-9


class TestSampling:
    def test_deterministic(self):
        a = sample(two_blob_mixture(), 4, seed=7)
        b = sample(two_blob_mixture(), 4, seed=7)
        assert a.points.tobytes() == b.points.tobytes()
        np.testing.assert_array_equal(a.weights, np.full(4, 0.25))

    def test_mean_concentration(self):
        m = sample(two_blob_mixture(), 100, seed=0)
        assert np.all(np.abs(m.points.mean(axis=0) - 0.5) <= 0.15)

    def test_component_fractions(self):
        _, comp = sample(two_blob_mixture(), 10_000, seed=1, return_components=True)
        assert abs(np.mean(comp == 0) - 0.5) <= 0.02

    def test_region_sampling_respects_predicate(self):
        f = ScoreFunction("f2")
        m = sample_region(two_blob_mixture(), 50, 3, lambda x: f(x) < 0, Domain())
        assert len(m) == 50
        assert np.all(f(m.points) < 0)
        assert np.all(Domain().contains(m.points))

    def test_region_sampling_null_set(self):
        with pytest.raises(InfeasibleError):
            sample_region(two_blob_mixture(), 5, 0, lambda x: np.zeros(len(x), bool),
                          max_draws=4096)


class TestTruncate:
    def test_all_true_is_identity(self):
        P = discretize(two_blob_mixture(), Domain(nx=8, ny=8))
        out = truncate(P, np.ones(P.domain.shape, bool))
        np.testing.assert_array_equal(out.mass, P.mass)

    def test_half_mass_doubles(self):
        dom = Domain(nx=2, ny=2)
        P = GridDensity(dom, np.full((2, 2), 0.25))
        mask = np.array([[True, True], [False, False]])
        out = truncate(P, mask)
        np.testing.assert_allclose(out.mass, [[0.5, 0.5], [0, 0]])
        assert out.info["mask_probability"] == pytest.approx(0.5)

    def test_negative_side_of_linear_score(self):
        dom = Domain()
        P = discretize(two_blob_mixture(), dom)
        mask = grid_scores(ScoreFunction("f2"), dom) < 0
        out = truncate(P, mask)
        assert out.total == pytest.approx(1.0, abs=1e-12)
        assert not np.any(out.mass[~mask] > 0)
        np.testing.assert_allclose(out.mass[mask] * P.mass[mask].sum(), P.mass[mask])

    def test_null_set(self):
        P = GridDensity(Domain(nx=2, ny=2), [[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(InfeasibleError, match="null set"):
            truncate(P, np.array([[False, True], [True, True]]))

    def test_shape_mismatch(self):
        P = discretize(two_blob_mixture(), Domain(nx=4, ny=4))
        with pytest.raises(ValueError):
            truncate(P, np.ones((3, 4), bool))

    @given(mass=arrays(float, (5, 4), elements=st.floats(0, 10, allow_subnormal=False)),
           mask=arrays(bool, (5, 4)))
    def test_idempotent_and_ratio_preserving(self, mass, mask):
        if mass[mask].sum() < 1e-6:
            return
        P = GridDensity(Domain(nx=5, ny=4), mass)
        once = truncate(P, mask)
        twice = truncate(once, mask)
        np.testing.assert_array_equal(twice.mass, once.mass)
        keep = mask & (mass > 0)
        if keep.sum() >= 2:
            ratio_in = mass[keep] / mass[keep][0]
            ratio_out = once.mass[keep] / once.mass[keep][0]
            np.testing.assert_allclose(ratio_out, ratio_in, rtol=1e-12)


class TestRestrictPoints:
    def test_identity(self):
        m = sample(two_blob_mixture(), 10, 0)
        out = restrict_points(m, np.ones(10, bool))
        np.testing.assert_array_equal(out.weights, m.weights)

    def test_half_doubles(self):
        m = DiscreteMeasure(np.zeros((4, 2)), np.full(4, 0.25))
        out = restrict_points(m, np.array([True, False, True, False]))
        np.testing.assert_allclose(out.weights, [0.5, 0.5])

    def test_callable_predicate(self):
        m = sample(two_blob_mixture(), 200, 2)
        f = ScoreFunction("f2")
        out = restrict_points(m, lambda p: f(p) < 0)
        assert out.total == pytest.approx(1.0)
        assert np.all(f(out.points) < 0)

    def test_empty(self):
        m = sample(two_blob_mixture(), 3, 0)
        with pytest.raises(InfeasibleError):
            restrict_points(m, np.zeros(3, bool))


class TestSerialization:
    def test_grid_round_trip(self, tmp_path):
        P = discretize(two_blob_mixture(), Domain(0, 1, -1, 2, nx=6, ny=5))
        save_grid_density(tmp_path / "p.csv", P)
        Q = load_grid_density(tmp_path / "p.csv")
        assert Q.domain == P.domain
        np.testing.assert_array_equal(Q.mass, P.mass)
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "nx,ny,x_min,x_max,y_min,y_max"

    def test_points_round_trip(self, tmp_path):
        m = sample(two_blob_mixture(), 7, 5)
        save_discrete_measure(tmp_path / "m.csv", m)
        back = load_discrete_measure(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.points, m.points)
        np.testing.assert_array_equal(back.weights, m.weights)
