"""Exact answers for tiny transport problems, used to check the approximate solvers."""

from __future__ import annotations

from itertools import permutations

import numpy as np
from scipy.optimize import linprog

from .cost import CostMatrix
from .sinkhorn import dual_objective, feasible_potentials

MAX_ORACLE_SIZE = 8


def _values(C):
    return C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)


def assignment_oracle(C) -> tuple[np.ndarray, float]:
    """Optimal coupling of two uniform ``n``-point measures by enumeration.

    Returns the minimizing permutation (first in lexicographic order among
    ties) and the transport cost with weights ``1/n``, i.e. the mean of the
    assigned entries.
    """
    C = _values(C)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("assignment oracle needs a square cost matrix")
    if n > MAX_ORACLE_SIZE:
        raise ValueError(f"oracle scale exceeded: n={n} > {MAX_ORACLE_SIZE}")
    perms = np.array(list(permutations(range(n))), dtype=int)
    totals = C[np.arange(n), perms].sum(axis=1)
    best = int(np.argmin(totals))
    return perms[best], float(totals[best] / n)


def tiny_lp_bound(P, Q, C) -> tuple[float, np.ndarray, np.ndarray]:
    """Lower bound on the OT cost from an exactly solved dual LP.

    The dual ``max P.phi + Q.psi  s.t.  phi_i + psi_j <= C_ij`` is solved
    with HiGHS and the solution is then rounded to exact feasibility by
    c-transforms, so the returned value is a valid bound by weak duality.
    """
    C = _values(C)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n, m = C.shape
    if n > MAX_ORACLE_SIZE or m > MAX_ORACLE_SIZE:
        raise ValueError(f"oracle scale exceeded: {n}x{m}")
    A = np.zeros((n * m, n + m))
    rows = np.arange(n * m)
    A[rows, rows // m] = 1.0
    A[rows, n + rows % m] = 1.0
    res = linprog(-np.concatenate([P, Q]), A_ub=A, b_ub=C.ravel(),
                  bounds=[(None, None)] * (n + m), method="highs")
    if res.status != 0:
        phi = np.zeros(n)
    else:
        phi = res.x[:n]
    phi, psi = feasible_potentials(phi, C)
    return dual_objective(phi, psi, P, Q), phi, psi
