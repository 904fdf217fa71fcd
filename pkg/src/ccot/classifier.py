"""Score functions, labels and delta-confidence regions on a grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import InfeasibleError
from .measures import Domain, GridDensity, write_grid_csv


def _f1(p):
    return p[:, 0] + p[:, 1] + 0.2 * np.sin(2.0 * np.pi * p[:, 0]) - 1.0


def _f2(p):
    return p[:, 0] + p[:, 1] - 1.0


def _f3(p):
    return (p[:, 0] - 0.5) ** 2 + (p[:, 1] - 0.5) ** 2 - 1.0 / 9.0


_BUILTIN = {"f1": _f1, "f2": _f2, "f3": _f3}


class ScoreFunction:
    """Real-valued score whose sign is the classifier decision.

    Built-ins are ``"f1"``, ``"f2"`` and ``"f3"``. A custom score is any
    deterministic callable; with ``vectorized=True`` it receives an
    ``(n, 2)`` array and must return ``n`` scores, otherwise it is called
    once per 2-vector.
    """

    def __init__(self, name: str = "f1", func: Callable | None = None,
                 vectorized: bool = True):
        if func is None:
            if name not in _BUILTIN:
                raise ValueError(f"unknown score function {name!r}; pass func= for custom scores")
            func, vectorized = _BUILTIN[name], True
        elif name in _BUILTIN:
            name = "custom"
        self.name = name
        self.func = func
        self.vectorized = vectorized

    def __call__(self, x) -> np.ndarray | float:
        pts = np.asarray(x, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self.vectorized:
            out = np.asarray(self.func(pts), dtype=float).reshape(len(pts))
        else:
            out = np.array([float(self.func(p)) for p in pts])
        return float(out[0]) if scalar else out

    def __repr__(self):
        return f"ScoreFunction({self.name!r})"


def score(f: ScoreFunction, x):
    return f(x)


def label(f: ScoreFunction, x):
    """Classifier decision ``sign(f(x))`` in {-1, +1}; a zero score counts as +1."""
    s = np.asarray(f(x))
    out = np.where(s >= 0, 1, -1)
    return int(out) if out.ndim == 0 else out


def grid_scores(f: ScoreFunction, domain: Domain) -> np.ndarray:
    return f(domain.center_points()).reshape(domain.shape)


@dataclass
class ConfidenceRegion:
    delta: float
    r: float
    achieved_prob: float
    scores: np.ndarray
    source_mask: np.ndarray
    target_mask: np.ndarray


def _accumulate(P: GridDensity, scores: np.ndarray, delta: float):
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    flat_s = scores.ravel()
    flat_m = P.mass.ravel()
    pos = np.flatnonzero(flat_s > 0)
    # stable sort: equal scores are taken in row-major cell order
    order = pos[np.argsort(flat_s[pos], kind="stable")]
    cum = np.cumsum(flat_m[order])
    if len(cum) == 0 or delta >= cum[-1]:
        p_plus = float(cum[-1]) if len(cum) else 0.0
        raise InfeasibleError(
            f"confidence region infeasible: delta={delta} >= P(positive region)={p_plus:.6g}")
    k = int(np.searchsorted(cum, delta, side="right"))
    return order[: k + 1], float(flat_s[order[k]]), float(cum[k])


def confidence_threshold(P: GridDensity, f: ScoreFunction, delta: float) -> tuple[float, float]:
    """Discrete infimum ``r`` of the delta-confidence band and its probability.

    Positive-score cells are visited by increasing score and their masses
    accumulated until the total exceeds ``delta``; ``r`` is the score of the
    cell that crossed.
    """
    _, r, achieved = _accumulate(P, grid_scores(f, P.domain), delta)
    return r, achieved


def build_regions(P: GridDensity, f: ScoreFunction, delta: float) -> ConfidenceRegion:
    """Source (negative) and target (delta-confidence) masks for ``P`` under ``f``.

    The target mask holds exactly the accumulated cells, so cells tied with
    the crossing score at ``r`` but ordered after it are left out.
    """
    scores = grid_scores(f, P.domain)
    source = scores < 0
    if not source.any():
        raise InfeasibleError("nothing to explain: no cell has a negative score")
    cells, r, achieved = _accumulate(P, scores, delta)
    target = np.zeros(P.domain.shape, dtype=bool)
    target.flat[cells] = True
    return ConfidenceRegion(delta=delta, r=r, achieved_prob=achieved, scores=scores,
                            source_mask=source, target_mask=target)


def save_mask(path, domain: Domain, mask) -> None:
    write_grid_csv(path, domain, np.asarray(mask, dtype=int), integer=True)
