"""Entropic optimal transport: balanced and KL-relaxed (unbalanced) Sinkhorn.

The Gibbs kernel is ``K = exp(-C / epsilon)``, so smaller ``epsilon`` means
less blur. Both solvers run either on the scaling vectors ``(u, v)`` or, for
small ``epsilon``, on the log-domain potentials ``f = eps log u`` and
``g = eps log v``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lstsq, solve
from scipy.special import logsumexp

from .cost import CostMatrix
from .exceptions import InfeasibleError, NumericalError

logger = logging.getLogger(__name__)

# log-domain iterations switch on below this fraction of max(C)
AUTO_LOG_RATIO = 1e-3
# largest n + m for which the dense Newton finish is attempted
NEWTON_MAX_DIM = 6000
# scaling iterations count as stalled when a window does not halve the residual
_STALL_WINDOW = 100


@dataclass
class SinkhornParams:
    """Entropic solver settings.

    ``log_domain=None`` picks log-stabilized iterations automatically. With
    ``polish=True`` a balanced solve whose scaling iterations stall switches
    to Newton steps on the same dual for its remaining iteration budget.
    """

    epsilon: float
    max_iters: int = 10_000
    tolerance: float = 1e-9
    log_domain: bool | None = None
    polish: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class UnbalancedParams(SinkhornParams):
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")


@dataclass
class TransportPlan:
    """Coupling matrix with its marginals and solver diagnostics.

    ``phi`` and ``psi`` are the entropic potentials ``eps log u`` and
    ``eps log v`` (``-inf`` on atoms that receive no mass).
    """

    matrix: np.ndarray
    total_cost: float
    iterations_used: int
    residual: float
    converged: bool
    epsilon: float
    phi: np.ndarray
    psi: np.ndarray
    lambda1: float | None = None
    lambda2: float | None = None
    log_domain: bool = False
    newton_steps: int = 0
    src_marginal: np.ndarray = field(init=False)
    tgt_marginal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.src_marginal = self.matrix.sum(axis=1)
        self.tgt_marginal = self.matrix.sum(axis=0)

    @property
    def mass(self) -> float:
        return float(self.matrix.sum())

    def diagnostics(self) -> dict:
        return {
            "iterations_used": int(self.iterations_used),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "total_cost": float(self.total_cost),
            "epsilon": float(self.epsilon),
            "lambda1": None if self.lambda1 is None else float(self.lambda1),
            "lambda2": None if self.lambda2 is None else float(self.lambda2),
            "log_domain": bool(self.log_domain),
            "newton_steps": int(self.newton_steps),
        }

    def save_csv(self, path, floor: float = 1e-12) -> None:
        """Write ``i,j,mass`` rows for entries above ``floor``."""
        ii, jj = np.nonzero(self.matrix > floor)
        lines = ["i,j,mass"] + [f"{i},{j},{self.matrix[i, j]:.17g}" for i, j in zip(ii, jj)]
        Path(path).write_text("\n".join(lines) + "\n")

    def save_diagnostics(self, path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics(), indent=2, sort_keys=True) + "\n")


def _as_cost(C) -> np.ndarray:
    vals = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("cost matrix must be finite")
    return vals


def _check_weights(P, Q, C, balanced: bool):
    P = np.asarray(P, dtype=float).ravel()
    Q = np.asarray(Q, dtype=float).ravel()
    if C.shape != (len(P), len(Q)):
        raise ValueError(f"cost shape {C.shape} does not match weights ({len(P)}, {len(Q)})")
    if balanced:
        if np.any(P <= 0) or np.any(Q <= 0):
            raise ValueError("balanced Sinkhorn needs strictly positive weights; "
                             "drop zero-weight atoms first")
        if abs(P.sum() - 1) > 1e-8 or abs(Q.sum() - 1) > 1e-8:
            raise ValueError("balanced Sinkhorn needs probability vectors")
    else:
        if np.any(P < 0) or np.any(Q < 0) or P.sum() <= 0 or Q.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive total mass")
    return P, Q


def _use_log(params: SinkhornParams, C: np.ndarray) -> bool:
    if params.log_domain is not None:
        return bool(params.log_domain)
    return params.epsilon < AUTO_LOG_RATIO * float(C.max(initial=0.0))


def _kernel(C, eps):
    with np.errstate(under="ignore"):
        K = np.exp(-C / eps)
    if np.any(K.max(axis=1) == 0) or np.any(K.max(axis=0) == 0):
        raise NumericalError(
            f"Gibbs kernel underflows to an all-zero row or column at epsilon={eps:g}; "
            "increase epsilon or enable log_domain")
    return K


def _exponent(lam: float, eps: float) -> float:
    if np.isinf(lam):
        return 1.0
    return lam / (eps + lam)


def _finish(C, log_plan, f, g, it, residual, converged, params, lambdas=(None, None), logd=False):
    with np.errstate(under="ignore"):
        plan = np.exp(log_plan)
    if not np.all(np.isfinite(plan)):
        raise NumericalError("non-finite transport plan; try a larger epsilon")
    return TransportPlan(matrix=plan, total_cost=float(np.sum(plan * C)),
                         iterations_used=it, residual=float(residual), converged=converged,
                         epsilon=params.epsilon, phi=f, psi=g,
                         lambda1=lambdas[0], lambda2=lambdas[1], log_domain=logd)


def _log_plan(f, g, C, eps):
    return (f[:, None] + g[None, :] - C) / eps


def sinkhorn(P, Q, C, params: SinkhornParams) -> TransportPlan:
    """Balanced entropic OT plan between probability vectors ``P`` and ``Q``.

    Iterates ``u = P / (K v)``, ``v = Q / (K^T u)`` until the summed L1
    error of both marginals drops below ``params.tolerance`` or
    ``params.max_iters`` is reached (``plan.converged`` tells which).

    When the plan is close to a permutation the scaling iterations contract
    very slowly. If ``params.polish`` is set and a window of iterations
    fails to halve the residual, the remaining budget goes to damped Newton
    steps on the dual potentials; the plan keeps the form
    ``diag(u) K diag(v)``.
    """
    C = _as_cost(C)
    P, Q = _check_weights(P, Q, C, balanced=True)
    eps = params.epsilon
    logd = _use_log(params, C)
    if logd:
        f, g, it, residual, converged = _solve_log(P, Q, C, params, 1.0, 1.0, balanced=True)
    else:
        f, g, it, residual, converged = _solve_scaling(P, Q, C, params)
    steps = 0
    if not converged and params.polish and it < params.max_iters \
            and len(P) + len(Q) <= NEWTON_MAX_DIM:
        f, g, steps, residual = _newton(f, g, C, eps, P, Q, (np.inf, np.inf),
                                        params.tolerance, params.max_iters - it,
                                        _marginal_residual(C, eps, P, Q))
        it += steps
        converged = residual <= params.tolerance
    if not converged:
        logger.warning("sinkhorn stopped at max_iters=%d with residual %.3g", it, residual)
    plan = _finish(C, _log_plan(f, g, C, eps), f, g, it, residual, converged, params, logd=logd)
    plan.newton_steps = steps
    return plan


def _stalled(residual, ref) -> bool:
    return residual > 0.5 * ref


def _solve_scaling(P, Q, C, params):
    eps = params.epsilon
    K = _kernel(C, eps)
    u = np.ones(len(P))
    v = np.ones(len(Q))
    residual, converged, it = np.inf, False, 0
    ref = np.inf
    for it in range(1, params.max_iters + 1):
        u = P / (K @ v)
        v = Q / (K.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalError("Sinkhorn scalings overflowed; use log_domain=True")
        row = u * (K @ v)
        col = v * (K.T @ u)
        residual = np.abs(row - P).sum() + np.abs(col - Q).sum()
        if residual <= params.tolerance:
            converged = True
            break
        if params.polish and it % _STALL_WINDOW == 0:
            if _stalled(residual, ref):
                break
            ref = residual
    if np.any(u == 0) or np.any(v == 0):
        raise NumericalError("Sinkhorn scalings underflowed; use log_domain=True")
    return eps * np.log(u), eps * np.log(v), it, float(residual), converged


def _penalty(x, w, lam):
    """Value, gradient and Hessian diagonal of one marginal term of the dual."""
    if np.isinf(lam):
        return float(x @ w), w, np.zeros_like(w)
    e = w * np.exp(-x / lam)
    return float(-lam * np.sum(e - w)), e, e / lam


def _dual_state(f, g, C, eps, P, Q, lambdas):
    with np.errstate(under="ignore"):
        pi = np.exp((f[:, None] + g[None, :] - C) / eps)
    row, col = pi.sum(axis=1), pi.sum(axis=0)
    vf, gf, hf = _penalty(f, P, lambdas[0])
    vg, gg, hg = _penalty(g, Q, lambdas[1])
    value = vf + vg - eps * float(pi.sum())
    grad = np.concatenate([gf - row, gg - col])
    hdiag = np.concatenate([hf + row / eps, hg + col / eps])
    return pi, value, grad, hdiag


def _newton(f, g, C, eps, P, Q, lambdas, tol, budget, residual_fn):
    """Damped Newton ascent on the entropic dual with KL-relaxed marginals.

    Maximizes ``F(f) + G(g) - eps sum(exp((f + g - C) / eps))`` where each
    marginal term is ``<f, P>`` for an infinite ``lambda`` and
    ``-lambda <P, exp(-f / lambda) - 1>`` otherwise. A side with
    ``lambda = 0`` keeps its potential at zero. With both marginals hard
    the last entry of ``g`` is pinned to remove the constant null direction.
    Each step is kept only if it raises the dual or lowers ``residual_fn``.
    Returns ``(f, g, steps, residual)``.
    """
    n, m = C.shape
    free = np.concatenate([np.full(n, lambdas[0] > 0), np.full(m, lambdas[1] > 0)])
    if np.isinf(lambdas[0]) and np.isinf(lambdas[1]):
        free[-1] = False
    residual = residual_fn(f, g)
    if not free.any():
        return f, g, 0, residual
    pi, value, grad, hdiag = _dual_state(f, g, C, eps, P, Q, lambdas)
    steps = 0
    while steps < budget and residual > tol:
        steps += 1
        H = np.diag(hdiag)
        H[:n, n:] = pi / eps
        H[n:, :n] = pi.T / eps
        H = H[np.ix_(free, free)]
        d = np.zeros(n + m)
        try:
            # near-permutation plans are ill-conditioned; the line search guards each step
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                d[free] = solve(H, grad[free], assume_a="pos", check_finite=False)
        except LinAlgError:
            d[free] = lstsq(H, grad[free], check_finite=False)[0]
        t = 1.0
        while t > 1e-12:
            f_new, g_new = f + t * d[:n], g + t * d[n:]
            trial = _dual_state(f_new, g_new, C, eps, P, Q, lambdas)
            res_new = residual_fn(f_new, g_new)
            if trial[1] > value or res_new < residual:
                break
            t *= 0.5
        else:
            break
        f, g, residual = f_new, g_new, res_new
        pi, value, grad, hdiag = trial
    return f, g, steps, residual


def _marginal_residual(C, eps, P, Q):
    def residual(f, g):
        with np.errstate(under="ignore"):
            pi = np.exp((f[:, None] + g[None, :] - C) / eps)
        return float(np.abs(pi.sum(axis=1) - P).sum() + np.abs(pi.sum(axis=0) - Q).sum())
    return residual


def _sweep_displacement(C, eps, P, Q, a1, a2):
    logP, logQ = _safe_log(P), _safe_log(Q)

    def residual(f, g):
        f2, g2 = _lse_sweep(f, g, C, eps, logP, logQ, a1, a2)
        return float(max(np.abs(f2 - f).max(), np.abs(g2 - g).max()) / eps)
    return residual


def unbalanced_sinkhorn(P, Q, C, params: UnbalancedParams) -> TransportPlan:
    """Entropic OT with KL-penalized marginals.

    Solves ``min <T, C> - eps H(T) + lambda1 KL(T 1 | P) + lambda2 KL(T^T 1 | Q)``
    with the damped scaling updates ``u = (P / K v) ** (lambda1 / (eps + lambda1))``
    and ``v = (Q / K^T u) ** (lambda2 / (eps + lambda2))``. The plan's
    marginals are free to differ from ``P`` and ``Q``. ``lambda=inf`` gives a
    hard constraint and ``lambda=0`` leaves that marginal unconstrained.

    Convergence is measured by the largest change of ``log u`` and ``log v``
    between sweeps. Zero-weight atoms get no mass. Stalled iterations hand
    over to Newton steps as in :func:`sinkhorn`.
    """
    C = _as_cost(C)
    P, Q = _check_weights(P, Q, C, balanced=False)
    eps = params.epsilon
    a1 = _exponent(params.lambda1, eps)
    a2 = _exponent(params.lambda2, eps)
    lambdas = (params.lambda1, params.lambda2)
    rows = P > 0 if a1 > 0 else np.ones(len(P), dtype=bool)
    cols = Q > 0 if a2 > 0 else np.ones(len(Q), dtype=bool)
    Cs = C[np.ix_(rows, cols)]
    Ps, Qs = P[rows], Q[cols]

    logd = _use_log(params, Cs)
    if logd:
        fs, gs, it, residual, converged = _solve_log(Ps, Qs, Cs, params, a1, a2, balanced=False)
    else:
        K = _kernel(Cs, eps)
        u = np.ones(len(Ps))
        v = np.ones(len(Qs))
        residual, converged, it = np.inf, False, 0
        ref = np.inf
        for it in range(1, params.max_iters + 1):
            with np.errstate(over="ignore"):
                u_new = (Ps / (K @ v)) ** a1
                v_new = (Qs / (K.T @ u_new)) ** a2
            if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))) \
                    or np.any(u_new == 0) or np.any(v_new == 0):
                raise NumericalError("unbalanced Sinkhorn scalings left the float range; "
                                     "use log_domain=True or a larger epsilon")
            residual = max(np.abs(np.log(u_new / u)).max(), np.abs(np.log(v_new / v)).max())
            u, v = u_new, v_new
            if residual <= params.tolerance:
                converged = True
                break
            if params.polish and it % _STALL_WINDOW == 0:
                if _stalled(residual, ref):
                    break
                ref = residual
        fs, gs = eps * np.log(u), eps * np.log(v)
    steps = 0
    if not converged and params.polish and it < params.max_iters \
            and len(Ps) + len(Qs) <= NEWTON_MAX_DIM:
        fs, gs, steps, residual = _newton(
            fs, gs, Cs, eps, Ps, Qs, lambdas, params.tolerance, params.max_iters - it,
            _sweep_displacement(Cs, eps, Ps, Qs, a1, a2))
        it += steps
        converged = residual <= params.tolerance

    f = np.full(len(P), -np.inf)
    g = np.full(len(Q), -np.inf)
    f[rows], g[cols] = fs, gs
    if not converged:
        logger.warning("unbalanced sinkhorn stopped at max_iters=%d, displacement %.3g",
                       it, residual)
    with np.errstate(invalid="ignore"):
        lp = _log_plan(f, g, C, eps)
    lp = np.where(np.isnan(lp), -np.inf, lp)
    plan = _finish(C, lp, f, g, it, residual, converged, params, lambdas=lambdas, logd=logd)
    plan.newton_steps = steps
    return plan


# scalings are folded into the kernel once |log u| or |log v| exceeds this
_ABSORB = 50.0


def _solve_log(P, Q, C, params, a1, a2, balanced):
    """Log-stabilized scaling iterations with epsilon annealing.

    The kernel carries the current potentials, ``K = exp((f + g - C) / eps)``,
    and only the bounded scalings ``u, v`` are iterated; they are folded back
    into ``f, g`` whenever they grow. Regularization starts at ``max(C)`` and
    is halved until it reaches ``params.epsilon``, each stage warm-starting
    the next.
    """
    eps_final = params.epsilon
    schedule = []
    e = max(float(C.max()), eps_final)
    while e > eps_final:
        schedule.append(e)
        e *= 0.5
    schedule.append(eps_final)

    logP, logQ = _safe_log(P), _safe_log(Q)
    f = np.zeros(len(P))
    g = np.zeros(len(Q))
    total_it = 0
    residual, converged = np.inf, False
    check = 1 if C.size < 100_000 else 10
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        if not last:
            e1, e2 = _stage_exponents(params, eps, balanced)
        else:
            e1, e2 = a1, a2
        budget = params.max_iters - total_it if last else min(200, params.max_iters)
        tol = params.tolerance if last else max(params.tolerance, 1e-4)
        residual = np.inf
        f, g = _lse_sweep(f, g, C, eps, logP, logQ, e1, e2)
        K = np.exp((f[:, None] + g[None, :] - C) / eps)
        u = np.ones(len(P))
        v = np.ones(len(Q))
        ref = np.inf
        for it in range(1, budget + 1):
            total_it += 1
            Kv = K @ v
            if np.any(Kv == 0):
                f, g = _lse_sweep(f + eps * np.log(u), g + eps * np.log(v), C, eps,
                                  logP, logQ, e1, e2)
                K = np.exp((f[:, None] + g[None, :] - C) / eps)
                u[:] = 1.0
                v[:] = 1.0
                Kv = K @ v
            u_old, v_old = u, v
            if balanced:
                u = P / Kv
                v = Q / (K.T @ u)
            else:
                # a zero exponent maps an overflowed ratio to 1; other overflows are caught below
                with np.errstate(over="ignore"):
                    u = (P / Kv) ** e1 * np.exp((e1 - 1.0) * f / eps)
                    Ku = K.T @ u
                    if np.any(Ku == 0):
                        raise NumericalError("unbalanced kernel underflow; increase epsilon")
                    v = (Q / Ku) ** e2 * np.exp((e2 - 1.0) * g / eps)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericalError("log-stabilized Sinkhorn produced non-finite scalings")
            if balanced:
                if it % check == 0 or it == budget:
                    row = u * (K @ v)
                    residual = np.abs(row - P).sum() + np.abs(v * (K.T @ u) - Q).sum()
            else:
                with np.errstate(divide="ignore"):
                    residual = max(np.abs(np.log(u / u_old)).max(),
                                   np.abs(np.log(v / v_old)).max())
            stop = residual <= tol
            if last and params.polish and it % _STALL_WINDOW == 0:
                if _stalled(residual, ref):
                    budget = it
                ref = residual
            if stop or it == budget or max(np.abs(np.log(u)).max(),
                                           np.abs(np.log(v)).max()) > _ABSORB:
                f = f + eps * np.log(u)
                g = g + eps * np.log(v)
                if stop or it == budget:
                    break
                K = np.exp((f[:, None] + g[None, :] - C) / eps)
                u = np.ones(len(P))
                v = np.ones(len(Q))
        if last:
            converged = residual <= params.tolerance
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
            raise NumericalError("log-stabilized Sinkhorn produced non-finite potentials")
    return f, g, total_it, float(residual), converged


def _stage_exponents(params, eps, balanced):
    if balanced:
        return 1.0, 1.0
    return _exponent(params.lambda1, eps), _exponent(params.lambda2, eps)


def _safe_log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _lse_sweep(f, g, C, eps, logP, logQ, a1, a2):
    """One exact log-domain update of both potentials; a zero exponent pins the side at 0."""
    if a1 > 0:
        f = a1 * eps * (logP - logsumexp((g[None, :] - C) / eps, axis=1))
    else:
        f = np.zeros(C.shape[0])
    if a2 > 0:
        g = a2 * eps * (logQ - logsumexp((f[:, None] - C) / eps, axis=0))
    else:
        g = np.zeros(C.shape[1])
    return f, g


def recommend(plan: TransportPlan | np.ndarray, i: int, mode: str = "argmax",
              seed: int | None = None) -> int:
    """Target index recommended to source ``i``.

    ``"argmax"`` picks the heaviest entry of row ``i`` (lowest index on
    ties); ``"sample"`` draws from the normalized row.
    """
    M = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    row = M[i]
    total = row.sum()
    if not total > 0:
        raise InfeasibleError(f"source point unserved: row {i} of the plan has no mass")
    if mode == "argmax":
        return int(np.argmax(row))
    if mode == "sample":
        rng = np.random.Generator(np.random.PCG64(seed))
        return int(rng.choice(len(row), p=row / total))
    raise ValueError(f"unknown mode {mode!r}")


def recommend_all(plan: TransportPlan | np.ndarray, mode: str = "argmax",
                  seed: int | None = None) -> np.ndarray:
    """:func:`recommend` for every row; unserved rows get ``-1``."""
    M = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    out = np.full(M.shape[0], -1, dtype=int)
    rng = np.random.Generator(np.random.PCG64(seed))
    for i, row in enumerate(M):
        total = row.sum()
        if total > 0:
            out[i] = np.argmax(row) if mode == "argmax" else rng.choice(len(row), p=row / total)
    return out


def dual_objective(phi, psi, P, Q) -> float:
    """Kantorovich dual value ``E_P[phi] + E_Q[psi]``."""
    return float(np.dot(P, phi) + np.dot(Q, psi))


def feasible_potentials(phi, C) -> tuple[np.ndarray, np.ndarray]:
    """Round a source potential to a pair with ``phi_i + psi_j <= C_ij`` everywhere.

    Two discrete c-transforms: ``psi' = min_i C_ij - phi_i``, then
    ``phi' = min_j C_ij - psi'_j``. The result is dual feasible, so its
    dual value is a lower bound on the OT cost.
    """
    C = _as_cost(C)
    phi = np.where(np.isfinite(phi), phi, np.nan)
    base = np.nanmax(phi) if np.any(np.isfinite(phi)) else 0.0
    phi = np.where(np.isnan(phi), base, phi)
    psi_new = np.min(C - phi[:, None], axis=0)
    phi_new = np.min(C - psi_new[None, :], axis=1)
    return phi_new, psi_new
