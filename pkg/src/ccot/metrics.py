"""Scalar diagnostics for comparing collective and individual counterfactuals."""

from __future__ import annotations

import numpy as np

from .cost import CostMatrix, build_cost
from .measures import DiscreteMeasure, GridDensity
from .sinkhorn import SinkhornParams, TransportPlan, sinkhorn


def _mat(x):
    if isinstance(x, TransportPlan):
        return x.matrix
    if isinstance(x, CostMatrix):
        return x.values
    return np.asarray(x, dtype=float)


def transport_cost(plan, C) -> float:
    """``sum_ij plan_ij C_ij``."""
    return float(np.sum(_mat(plan) * _mat(C)))


def expected_recourse_cost(plan, C, P) -> float:
    """Average cost paid by a source individual following the plan.

    Each row is normalized to a conditional distribution over targets and
    the row expectations are averaged with the source weights ``P``.
    Rows without mass are skipped (and ``P`` renormalized over the rest).
    """
    M, Cv = _mat(plan), _mat(C)
    P = np.asarray(P, dtype=float)
    rows = M.sum(axis=1)
    served = rows > 0
    per_row = (M[served] * Cv[served]).sum(axis=1) / rows[served]
    return float(np.average(per_row, weights=P[served]))


def extra_cost_percent(cce_cost: float, baseline_cost: float) -> float:
    if not baseline_cost > 0:
        raise ValueError("baseline cost must be positive")
    return 100.0 * (cce_cost - baseline_cost) / baseline_cost


def kl_divergence(marginal, Q) -> float:
    """``KL(marginal || Q)`` after rescaling both vectors to unit mass.

    Uses ``0 log 0 = 0``; an atom carrying marginal mass where ``Q`` is zero
    is an error.
    """
    m = np.asarray(marginal, dtype=float)
    q = np.asarray(Q, dtype=float)
    if m.shape != q.shape:
        raise ValueError("marginal and Q differ in shape")
    if np.any(m < 0) or np.any(q < 0) or m.sum() <= 0 or q.sum() <= 0:
        raise ValueError("KL inputs must be nonnegative with positive mass")
    m = m / m.sum()
    q = q / q.sum()
    if np.any((m > 0) & (q == 0)):
        raise ValueError("support violation: marginal has mass where Q is zero")
    pos = m > 0
    return float(max(np.sum(m[pos] * np.log(m[pos] / q[pos])), 0.0))


def _as_discrete(mu) -> DiscreteMeasure:
    if isinstance(mu, GridDensity):
        return mu.to_discrete()
    if isinstance(mu, DiscreteMeasure):
        keep = mu.weights > 0
        return DiscreteMeasure(mu.points[keep], mu.weights[keep] / mu.weights[keep].sum())
    raise TypeError("expected a GridDensity or DiscreteMeasure")


def wasserstein_estimate(P, Q, p: float = 2.0, epsilon: float = 1e-3,
                         max_iters: int = 20_000, tolerance: float = 1e-9) -> float:
    """Entropic estimate of the p-Wasserstein distance ``W_p(P, Q)``.

    ``(<plan, d^p>)^(1/p)`` for the Sinkhorn plan at regularization
    ``epsilon`` (absolute, in cost units). The entropic blur biases the
    value upward by roughly ``epsilon``-sized amounts.
    """
    a, b = _as_discrete(P), _as_discrete(Q)
    kind = "squared_euclidean" if p == 2 else ("euclidean" if p == 1 else "p_power")
    C = build_cost(a.points, b.points, kind, p=None if kind != "p_power" else p)
    plan = sinkhorn(a.weights, b.weights, C,
                    SinkhornParams(epsilon, max_iters=max_iters, tolerance=tolerance))
    return float(max(plan.total_cost, 0.0) ** (1.0 / p))
