import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccot.classifier import (ScoreFunction, build_regions, confidence_threshold, grid_scores,
                             label, save_mask, score)
from ccot.exceptions import InfeasibleError
from ccot.measures import Domain, GridDensity, discretize, read_grid_csv, truncate, two_blob_mixture


@pytest.fixture(scope="module")
def P64():
    return discretize(two_blob_mixture(), Domain())


class TestScores:
    @pytest.mark.parametrize("name, expected", [("f1", 0.0), ("f2", 0.0), ("f3", -1 / 9)])
    def test_center_values(self, name, expected):
        assert score(ScoreFunction(name), [0.5, 0.5]) == pytest.approx(expected, abs=1e-15)

    def test_formulas(self, rng):
        x = rng.uniform(size=(30, 2))
        np.testing.assert_allclose(
            ScoreFunction("f1")(x), x[:, 0] + x[:, 1] + 0.2 * np.sin(2 * np.pi * x[:, 0]) - 1)
        np.testing.assert_allclose(
            ScoreFunction("f3")(x), (x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2 - 1 / 9)

    @pytest.mark.parametrize("point, expected", [([0.9, 0.9], 1), ([0.1, 0.1], -1),
                                                 ([0.5, 0.5], 1)])
    def test_labels(self, point, expected):
        assert label(ScoreFunction("f2"), point) == expected

    def test_custom_scalar_callback(self):
        f = ScoreFunction("custom", lambda p: p[0] - 0.25, vectorized=False)
        np.testing.assert_allclose(f(np.array([[0.5, 0.0], [0.0, 0.0]])), [0.25, -0.25])

    def test_unknown_builtin(self):
        with pytest.raises(ValueError):
            ScoreFunction("f9")


def _hand_grid():
    # 4x4 grid, scores increase with the flat index; masses are distinct
    dom = Domain(nx=4, ny=4)
    mass = np.arange(1, 17, dtype=float)
    mass /= mass.sum()
    P = GridDensity(dom, mass.reshape(4, 4))
    scores = np.arange(16, dtype=float).reshape(4, 4) - 5.5
    f = ScoreFunction("custom", lambda p: scores[dom.cell_index(p)])
    return P, f, scores


class TestThreshold:
    def test_small_delta_gives_smallest_positive_score(self, P64):
        f = ScoreFunction("f1")
        r, achieved = confidence_threshold(P64, f, 1e-9)
        s = grid_scores(f, P64.domain)
        assert r == s[s > 0].min()
        # one crossing cell is enough; tied cells after it are not accumulated
        assert achieved in set(P64.mass[s == r])
        reg = build_regions(P64, f, 1e-9)
        assert reg.target_mask.sum() == 1

    def test_accumulation_oracle(self):
        P, f, scores = _hand_grid()
        flat = P.mass.ravel()
        positive = np.flatnonzero(scores.ravel() > 0)
        p_plus = flat[positive].sum()
        delta = p_plus - flat[positive[-1]]
        r, achieved = confidence_threshold(P, f, delta)
        # accumulation passes delta only when the top cell joins
        assert r == scores.ravel()[positive[-1]]
        assert achieved == pytest.approx(p_plus)
        region = build_regions(P, f, delta)
        np.testing.assert_array_equal(region.target_mask, scores > 0)

    def test_default_setup_bounds(self, P64):
        reg = build_regions(P64, ScoreFunction("f1"), 0.2)
        assert 0.2 <= reg.achieved_prob <= 0.2 + P64.mass.max()

    def test_infeasible(self, P64):
        with pytest.raises(InfeasibleError, match="confidence region infeasible"):
            confidence_threshold(P64, ScoreFunction("f2"), 0.99)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
    def test_delta_range(self, P64, delta):
        with pytest.raises(ValueError):
            confidence_threshold(P64, ScoreFunction("f1"), delta)


class TestRegions:
    def test_disjoint_masks(self, P64):
        reg = build_regions(P64, ScoreFunction("f2"), 0.2)
        assert not np.any(reg.source_mask & reg.target_mask)
        assert reg.source_mask.any() and reg.target_mask.any()

    def test_ring_band(self, P64):
        reg = build_regions(P64, ScoreFunction("f3"), 0.2)
        dom = P64.domain
        probes = np.random.Generator(np.random.PCG64(0)).uniform(size=(100, 2))
        i, j = dom.cell_index(probes)
        rad = np.hypot(*(dom.center_points().reshape(dom.nx, dom.ny, 2)[i, j] - 0.5).T)
        inside = reg.target_mask[i, j]
        # band cells sit outside the circle of radius 1/3 and below the threshold
        assert np.all(rad[inside] > 1 / 3)
        assert np.all((rad[inside] - 1 / 3) ** 2 <= reg.r + 2 / 3 * rad[inside])
        s = reg.scores[i, j]
        assert np.all((s[inside] > 0) & (s[inside] <= reg.r))

    @pytest.mark.parametrize("name", ["f1", "f2", "f3"])
    def test_target_truncation_is_probability(self, P64, name):
        reg = build_regions(P64, ScoreFunction(name), 0.2)
        Q = truncate(P64, reg.target_mask)
        assert Q.is_probability(1e-12)

    def test_nothing_to_explain(self):
        P = discretize(two_blob_mixture(), Domain(nx=8, ny=8))
        with pytest.raises(InfeasibleError, match="nothing to explain"):
            build_regions(P, ScoreFunction("custom", lambda p: np.ones(len(p))), 0.2)

    @given(d1=st.floats(0.01, 0.4), d2=st.floats(0.01, 0.4))
    def test_monotone_in_delta(self, P64, d1, d2):
        lo, hi = sorted((d1, d2))
        f = ScoreFunction("f1")
        a, b = build_regions(P64, f, lo), build_regions(P64, f, hi)
        assert a.r <= b.r
        assert np.all(b.target_mask[a.target_mask])

    @pytest.mark.parametrize("name", ["f1", "f2", "f3"])
    def test_cell_granular_exactness(self, P64, name):
        reg = build_regions(P64, ScoreFunction(name), 0.2)
        s = np.where(reg.target_mask, reg.scores, -np.inf)
        top = np.unravel_index(np.argmax(s), s.shape)
        assert P64.mass[reg.target_mask].sum() - P64.mass[top] <= 0.2
        assert np.all((reg.scores[reg.target_mask] > 0)
                      & (reg.scores[reg.target_mask] <= reg.r))

    def test_mask_csv(self, tmp_path, P64):
        reg = build_regions(P64, ScoreFunction("f1"), 0.2)
        save_mask(tmp_path / "m.csv", P64.domain, reg.target_mask)
        dom, vals = read_grid_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(vals.astype(bool), reg.target_mask)
