"""Pairwise modification costs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("squared_euclidean", "euclidean", "p_power", "l1")

# n*m ceiling for dense cost matrices; a 128x128 grid against itself
MAX_DENSE_ENTRIES = 128 ** 4


@dataclass
class CostMatrix:
    values: np.ndarray
    kind: str = "squared_euclidean"
    p: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if np.any(self.values < 0) or np.any(np.isnan(self.values)):
            raise ValueError("costs must be nonnegative")

    @property
    def shape(self):
        return self.values.shape

    def mean(self) -> float:
        return float(self.values.mean())


def check_kind(kind: str, p: float | None = None, strictly_convex: bool = False) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown cost kind {kind!r}; expected one of {KINDS}")
    if kind == "p_power" and (p is None or p <= 0):
        raise ValueError("p_power cost needs p > 0")
    if strictly_convex and not (kind == "squared_euclidean" or (kind == "p_power" and p > 1)):
        raise ValueError(f"cost {kind!r} (p={p}) is not strictly convex; "
                         "grid map solvers need p_power with p > 1")


def build_cost(points_src, points_tgt, kind: str = "squared_euclidean",
               p: float | None = None, strictly_convex: bool = False) -> CostMatrix:
    """Dense cost between two point sets.

    ``kind`` is one of ``squared_euclidean`` (``|x-y|^2``), ``euclidean``,
    ``p_power`` (``|x-y|^p``) or ``l1``. With ``strictly_convex=True`` kinds
    unusable by the back-and-forth solver are rejected.
    """
    check_kind(kind, p, strictly_convex)
    X = np.atleast_2d(np.asarray(points_src, dtype=float))
    Y = np.atleast_2d(np.asarray(points_tgt, dtype=float))
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("point sets must be nonempty")
    if len(X) * len(Y) > MAX_DENSE_ENTRIES:
        raise ValueError(f"dense cost of {len(X)}x{len(Y)} exceeds {MAX_DENSE_ENTRIES} entries; "
                         "use the back-and-forth grid solver instead")
    diff = X[:, None, :] - Y[None, :, :]
    if kind == "l1":
        C = np.abs(diff).sum(-1)
    else:
        sq = (diff ** 2).sum(-1)
        if kind == "squared_euclidean":
            C = sq
        elif kind == "euclidean":
            C = np.sqrt(sq)
        else:
            C = sq ** (p / 2.0)
    return CostMatrix(C, kind, p)


def effective_cost(C: CostMatrix, gamma: float, B: float) -> CostMatrix:
    """Discounted-time cost ``1 - gamma ** (c / B)``.

    Models an agent with discount factor ``gamma`` who moves at budget ``B``
    per step; the transform is strictly increasing in ``c`` so nearest
    targets are preserved.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not B > 0:
        raise ValueError("B must be positive")
    with np.errstate(over="ignore", under="ignore"):
        vals = -np.expm1(np.log(gamma) * (C.values / B))
    return CostMatrix(vals, kind=f"effective({C.kind})", p=C.p)
