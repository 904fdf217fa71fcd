"""scikit-learn style wrappers around the counterfactual solvers.

``fit(X, Y)`` takes the negatively classified points ``X`` and candidate
target points ``Y``; ``predict`` returns target indices and ``transform``
returns the counterfactual points themselves.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import classic_ce
from .bfm import BFMParams, back_and_forth, evaluate_map
from .cost import build_cost, check_kind
from .measures import GridDensity
from .sinkhorn import SinkhornParams, UnbalancedParams, sinkhorn, unbalanced_sinkhorn


def _points(X, name="X"):
    X = check_array(X, dtype=float, ensure_min_samples=1)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have two columns, got {X.shape[1]}")
    return X


def _weights(w, n):
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (n,) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be nonnegative, one per point, with positive sum")
    return w / w.sum()


class ClassicCE(TransformerMixin, BaseEstimator):
    """Nearest-target counterfactuals, one individual at a time.

    Parameters
    ----------
    cost : str
        Cost kind passed to :func:`ccot.cost.build_cost`.
    p : float, optional
        Exponent for the ``p_power`` cost.
    """

    def __init__(self, cost="euclidean", p=None):
        self.cost = cost
        self.p = p

    def fit(self, X, Y):
        check_kind(self.cost, self.p)
        self.targets_ = _points(Y, "Y")
        _points(X)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "targets_")
        X = _points(X)
        C = build_cost(X, self.targets_, self.cost, self.p)
        return classic_ce(X, self.targets_, C).target_index

    def transform(self, X):
        idx = self.predict(X)
        return self.targets_[idx]


class CollectiveCE(TransformerMixin, BaseEstimator):
    """Counterfactuals chosen jointly through an entropic transport plan.

    Parameters
    ----------
    solver : {"sinkhorn", "unbalanced"}
    epsilon : float, optional
        Absolute regularization. When omitted, ``epsilon_scale * mean(C)``.
    epsilon_scale : float
    lambda1, lambda2 : float
        Marginal penalties of the unbalanced solver; ``np.inf`` enforces
        the marginal exactly.
    cost, p :
        Ground cost, as in :class:`ClassicCE`.
    max_iters, tol : solver stopping rule.

    Attributes
    ----------
    plan_ : TransportPlan
        Coupling between the fitted source and target points.
    epsilon_ : float
        Regularization actually used.

    Notes
    -----
    A new point ``x`` is served by the target maximizing
    ``psi_j - c(x, y_j)``, which reproduces the argmax of the fitted plan
    row for every training point.
    """

    def __init__(self, solver="sinkhorn", epsilon=None, epsilon_scale=0.01,
                 lambda1=1.0, lambda2=1.0, cost="euclidean", p=None,
                 max_iters=10_000, tol=1e-9):
        self.solver = solver
        self.epsilon = epsilon
        self.epsilon_scale = epsilon_scale
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.cost = cost
        self.p = p
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, Y, sample_weight=None, target_weight=None):
        if self.solver not in ("sinkhorn", "unbalanced"):
            raise ValueError(f"unknown solver {self.solver!r}")
        X = _points(X)
        Y = _points(Y, "Y")
        P = _weights(sample_weight, len(X))
        Q = _weights(target_weight, len(Y))
        C = build_cost(X, Y, self.cost, self.p)
        eps = self.epsilon if self.epsilon is not None else self.epsilon_scale * C.mean()
        if self.solver == "sinkhorn":
            plan = sinkhorn(P, Q, C, SinkhornParams(eps, self.max_iters, self.tol))
        else:
            plan = unbalanced_sinkhorn(P, Q, C, UnbalancedParams(
                eps, self.max_iters, self.tol, lambda1=self.lambda1, lambda2=self.lambda2))
        self.targets_ = Y
        self.plan_ = plan
        self.epsilon_ = float(eps)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "plan_")
        X = _points(X)
        C = build_cost(X, self.targets_, self.cost, self.p).values
        score = self.plan_.psi[None, :] - C
        score[:, ~np.isfinite(self.plan_.psi)] = -np.inf
        return np.argmax(score, axis=1)

    def transform(self, X):
        idx = self.predict(X)
        return self.targets_[idx]


class BackAndForthCCE(TransformerMixin, BaseEstimator):
    """Quadratic-cost counterfactual map on a grid.

    ``fit`` takes two :class:`GridDensity` objects on the same grid instead
    of point arrays; ``transform`` evaluates the fitted map at arbitrary
    points of the domain without re-solving.
    """

    def __init__(self, sigma0=None, max_iters=300, tol=0.05, radius=2):
        self.sigma0 = sigma0
        self.max_iters = max_iters
        self.tol = tol
        self.radius = radius

    def fit(self, P, Q):
        if not isinstance(P, GridDensity) or not isinstance(Q, GridDensity):
            raise TypeError("BackAndForthCCE.fit expects two GridDensity objects")
        params = BFMParams(sigma0=self.sigma0, max_iters=self.max_iters,
                           tol=self.tol, radius=self.radius)
        self.potentials_, self.map_ = back_and_forth(P, Q, params)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return evaluate_map(self.map_, _points(X))
