"""Back-and-forth dual ascent for quadratic-cost transport on a grid.

Potentials live on cell centers. For ``c(x, y) = |x - y|^2 / 2`` the
c-transform separates into two one-dimensional lower-envelope passes, the
transport map is ``T(x) = x - grad(phi^c)(x)`` and pushforwards are
accumulated by bilinear mass splatting. Gradients of the dual functionals
are taken in the H^1 metric through a Neumann Poisson solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.fft import dctn, idctn

from .exceptions import InfeasibleError, NumericalError
from .measures import Domain, GridDensity, write_grid_csv

logger = logging.getLogger(__name__)


@njit(cache=True)
def _envelope_1d(f, nodes, queries, out, arg):
    """out[q] = min_k 0.5 * (queries[q] - nodes[k])**2 + f[k]; both grids ascending.

    ``arg[q]`` receives the minimizing node.
    """
    n = nodes.shape[0]
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + 0.5 * nodes[q] * nodes[q]) - (f[p] + 0.5 * nodes[p] * nodes[p])) \
                / (nodes[q] - nodes[p])
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for i in range(queries.shape[0]):
        x = queries[i]
        while z[k + 1] < x:
            k += 1
        d = x - nodes[v[k]]
        out[i] = 0.5 * d * d + f[v[k]]
        arg[i] = v[k]


@njit(cache=True)
def _ctransform_2d(phi, xs, ys):
    nx, ny = phi.shape
    h = np.empty((nx, ny))
    hj = np.empty((nx, ny), dtype=np.int64)
    row = np.empty(ny)
    for i in range(nx):
        for j in range(ny):
            row[j] = -phi[i, j]
        _envelope_1d(row, ys, ys, h[i], hj[i])
    out = np.empty((nx, ny))
    ai = np.empty((nx, ny), dtype=np.int64)
    aj = np.empty((nx, ny), dtype=np.int64)
    col = np.empty(nx)
    res = np.empty(nx)
    arg = np.empty(nx, dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            col[i] = h[i, j]
        _envelope_1d(col, xs, xs, res, arg)
        for i in range(nx):
            out[i, j] = res[i]
            ai[i, j] = arg[i]
            aj[i, j] = hj[arg[i], j]
    return out, ai, aj


@njit(cache=True)
def _cell_min(ex, ey, dx, dy, p00, p10, p01, p11):
    """Minimize 0.5|e - (s dx, t dy)|^2 - bilinear(s, t) over the unit square."""
    b = p10 - p00
    c = p01 - p00
    d = p11 - p10 - p01 + p00
    best = np.inf
    bs = 0.0
    bt = 0.0
    # the four edges; each restriction is a convex parabola
    for e in range(4):
        if e < 2:
            s = float(e)
            t = min(max((dy * ey + c + d * s) / (dy * dy), 0.0), 1.0)
        else:
            t = float(e - 2)
            s = min(max((dx * ex + b + d * t) / (dx * dx), 0.0), 1.0)
        val = 0.5 * (ex - s * dx) ** 2 + 0.5 * (ey - t * dy) ** 2 \
            - (p00 + b * s + c * t + d * s * t)
        if val < best:
            best, bs, bt = val, s, t
    det = dx * dx * dy * dy - d * d
    if det > 0.0:
        rs = dx * ex + b
        rt = dy * ey + c
        s = (rs * dy * dy + d * rt) / det
        t = (dx * dx * rt + d * rs) / det
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            val = 0.5 * (ex - s * dx) ** 2 + 0.5 * (ey - t * dy) ** 2 \
                - (p00 + b * s + c * t + d * s * t)
            if val < best:
                best, bs, bt = val, s, t
    return best, bs, bt


@njit(cache=True)
def _refine(phi, xs, ys, disc, ai, aj, radius, out, tx, ty):
    nx, ny = phi.shape
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    for i in range(nx):
        for j in range(ny):
            best = disc[i, j]
            bx = xs[ai[i, j]]
            by = ys[aj[i, j]]
            lo_i = max(ai[i, j] - radius, 0)
            hi_i = min(ai[i, j] + radius, nx - 1)
            lo_j = max(aj[i, j] - radius, 0)
            hi_j = min(aj[i, j] + radius, ny - 1)
            for ci in range(lo_i, hi_i):
                for cj in range(lo_j, hi_j):
                    val, s, t = _cell_min(xs[i] - xs[ci], ys[j] - ys[cj], dx, dy,
                                          phi[ci, cj], phi[ci + 1, cj],
                                          phi[ci, cj + 1], phi[ci + 1, cj + 1])
                    if val < best:
                        best = val
                        bx = xs[ci] + s * dx
                        by = ys[cj] + t * dy
            out[i, j] = best
            tx[i, j] = bx
            ty[i, j] = by


@njit(cache=True)
def _candidates(phi, xs, ys, ai, aj, radius):
    """Per-query minimum of every scanned interpolation cell and its location."""
    nx, ny = phi.shape
    m = 4 * radius * radius
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    vals = np.full((nx, ny, m), np.inf)
    cx = np.zeros((nx, ny, m))
    cy = np.zeros((nx, ny, m))
    for i in range(nx):
        for j in range(ny):
            k = 0
            for ci in range(max(ai[i, j] - radius, 0), min(ai[i, j] + radius, nx - 1)):
                for cj in range(max(aj[i, j] - radius, 0), min(aj[i, j] + radius, ny - 1)):
                    val, s, t = _cell_min(xs[i] - xs[ci], ys[j] - ys[cj], dx, dy,
                                          phi[ci, cj], phi[ci + 1, cj],
                                          phi[ci, cj + 1], phi[ci + 1, cj + 1])
                    vals[i, j, k] = val
                    cx[i, j, k] = xs[ci] + s * dx
                    cy[i, j, k] = ys[cj] + t * dy
                    k += 1
    return vals, cx, cy


@njit(cache=True)
def _stencil(x, y, x0, y0, dx, dy, nx, ny, idx, w):
    sx = min(max((x - x0) / dx - 0.5, 0.0), nx - 1.0)
    sy = min(max((y - y0) / dy - 0.5, 0.0), ny - 1.0)
    i0 = min(int(np.floor(sx)), nx - 2)
    j0 = min(int(np.floor(sy)), ny - 2)
    ax = sx - i0
    ay = sy - j0
    idx[0] = i0 * ny + j0
    idx[1] = (i0 + 1) * ny + j0
    idx[2] = i0 * ny + j0 + 1
    idx[3] = (i0 + 1) * ny + j0 + 1
    w[0] = (1 - ax) * (1 - ay)
    w[1] = ax * (1 - ay)
    w[2] = (1 - ax) * ay
    w[3] = ax * ay


@njit(cache=True)
def _select_ties(mu, nu, push, tx, ty, vals, cx, cy, eta, x0, y0, dx, dy, sweeps):
    """Greedy choice among near-minimizers that lowers ``|push - nu|_1``.

    ``push``, ``tx`` and ``ty`` are updated in place.
    """
    nx, ny = mu.shape
    m = vals.shape[2]
    flat_push = push.ravel()
    flat_nu = nu.ravel()
    old_i = np.empty(4, dtype=np.int64)
    old_w = np.empty(4)
    new_i = np.empty(4, dtype=np.int64)
    new_w = np.empty(4)
    for _ in range(sweeps):
        changed = 0
        for i in range(nx):
            for j in range(ny):
                mass = mu[i, j]
                if mass <= 0.0:
                    continue
                low = np.inf
                for k in range(m):
                    low = min(low, vals[i, j, k])
                _stencil(tx[i, j], ty[i, j], x0, y0, dx, dy, nx, ny, old_i, old_w)
                for q in range(4):
                    flat_push[old_i[q]] -= mass * old_w[q]
                best_gain = 1e-15
                best_k = -1
                for k in range(m):
                    if vals[i, j, k] - low > eta:
                        continue
                    if cx[i, j, k] == tx[i, j] and cy[i, j, k] == ty[i, j]:
                        continue
                    _stencil(cx[i, j, k], cy[i, j, k], x0, y0, dx, dy, nx, ny, new_i, new_w)
                    gain = 0.0
                    # L1 change on the touched nodes, counting shared nodes once
                    for q in range(8):
                        node = old_i[q] if q < 4 else new_i[q - 4]
                        seen = False
                        for r in range(q):
                            other = old_i[r] if r < 4 else new_i[r - 4]
                            if other == node:
                                seen = True
                                break
                        if seen:
                            continue
                        base = flat_push[node]
                        cur = base
                        nxt = base
                        for r in range(4):
                            if old_i[r] == node:
                                cur += mass * old_w[r]
                            if new_i[r] == node:
                                nxt += mass * new_w[r]
                        gain += abs(cur - flat_nu[node]) - abs(nxt - flat_nu[node])
                    if gain > best_gain:
                        best_gain = gain
                        best_k = k
                if best_k >= 0:
                    tx[i, j] = cx[i, j, best_k]
                    ty[i, j] = cy[i, j, best_k]
                    changed += 1
                _stencil(tx[i, j], ty[i, j], x0, y0, dx, dy, nx, ny, old_i, old_w)
                for q in range(4):
                    flat_push[old_i[q]] += mass * old_w[q]
        if changed == 0:
            break


def _check_potential(phi, domain):
    phi = np.ascontiguousarray(phi, dtype=float)
    if phi.shape != domain.shape:
        raise ValueError("potential does not match the grid")
    if not np.all(np.isfinite(phi)):
        raise ValueError("potential must be finite")
    return phi


def ctransform_quadratic(phi, domain: Domain) -> np.ndarray:
    """Grid c-transform ``phi^c(y) = min_x |x - y|^2 / 2 - phi(x)`` over cell centers.

    Exact on the grid: each one-dimensional pass takes the lower envelope
    of the parabolas ``0.5 (t - x_k)^2 - phi_k`` in linear time.
    """
    phi = _check_potential(phi, domain)
    return _ctransform_2d(phi, domain.x_centers, domain.y_centers)[0]


def ctransform_interpolated(phi, domain: Domain, radius: int = 2
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """c-transform against the bilinear interpolant of ``phi``, with minimizers.

    Returns ``(phi_c, tx, ty)`` where ``phi_c[i, j] = min_y |x_ij - y|^2 / 2 - Phi(y)``
    over the hull of the cell centers and ``(tx, ty)[i, j]`` is the minimizing
    ``y``. The search starts from the exact grid minimizer and scans the
    ``(2 radius)^2`` interpolation cells around it, so ``phi_c`` never exceeds
    :func:`ctransform_quadratic`.

    Because ``grad(phi_c)(x) = x - y*(x)``, the minimizer is the transport map
    ``x - grad(phi_c)(x)`` without any differencing, and splatting mass at
    ``y*`` gives the exact gradient of the dual functional.
    """
    phi = _check_potential(phi, domain)
    if min(domain.shape) < 2:
        raise ValueError("interpolated c-transform needs at least 2 cells per axis")
    xs, ys = domain.x_centers, domain.y_centers
    disc, ai, aj = _ctransform_2d(phi, xs, ys)
    out = np.empty(domain.shape)
    tx = np.empty(domain.shape)
    ty = np.empty(domain.shape)
    _refine(phi, xs, ys, disc, ai, aj, int(radius), out, tx, ty)
    return out, tx, ty


@dataclass
class GridMap:
    """Transport map sampled at cell centers: ``T(center[i, j]) = (map_x, map_y)[i, j]``."""

    domain: Domain
    map_x: np.ndarray
    map_y: np.ndarray

    @classmethod
    def identity(cls, domain: Domain) -> "GridMap":
        X, Y = domain.centers()
        return cls(domain, X, Y)

    def points(self) -> np.ndarray:
        return np.column_stack([self.map_x.ravel(), self.map_y.ravel()])

    def displacement(self) -> tuple[np.ndarray, np.ndarray]:
        X, Y = self.domain.centers()
        return self.map_x - X, self.map_y - Y

    def save_csv(self, prefix) -> None:
        """Write ``<prefix>_x.csv`` and ``<prefix>_y.csv`` with the grid header."""
        write_grid_csv(f"{prefix}_x.csv", self.domain, self.map_x)
        write_grid_csv(f"{prefix}_y.csv", self.domain, self.map_y)


def _gradient(field_, domain):
    gx, gy = np.gradient(field_, domain.dx, domain.dy, edge_order=1)
    return gx, gy


def map_from_ctransform(phic, domain: Domain) -> GridMap:
    """``T(x) = x - grad(phic)(x)`` clamped to the domain rectangle."""
    X, Y = domain.centers()
    gx, gy = _gradient(phic, domain)
    tx = np.clip(X - gx, domain.x_min, domain.x_max)
    ty = np.clip(Y - gy, domain.y_min, domain.y_max)
    return GridMap(domain, tx, ty)


def pushforward_map(phi, domain: Domain) -> GridMap:
    """Map induced by the target-side potential ``phi``: ``T(x) = x - grad(phi^c)(x)``."""
    return map_from_ctransform(ctransform_quadratic(phi, domain), domain)


def splat(domain: Domain, px, py, weights) -> np.ndarray:
    """Deposit ``weights`` at ``(px, py)`` onto cell centers by bilinear weights.

    Positions are clamped to the hull of the cell centers first, so no mass
    is lost at the boundary.
    """
    px = np.asarray(px, dtype=float).ravel()
    py = np.asarray(py, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    nx, ny = domain.shape
    sx = np.clip((px - domain.x_min) / domain.dx - 0.5, 0.0, nx - 1.0)
    sy = np.clip((py - domain.y_min) / domain.dy - 0.5, 0.0, ny - 1.0)
    i0 = np.minimum(np.floor(sx).astype(np.int64), nx - 2)
    j0 = np.minimum(np.floor(sy).astype(np.int64), ny - 2)
    ax = sx - i0
    ay = sy - j0
    idx = np.concatenate([i0 * ny + j0, (i0 + 1) * ny + j0, i0 * ny + j0 + 1,
                          (i0 + 1) * ny + j0 + 1])
    vals = np.concatenate([w * (1 - ax) * (1 - ay), w * ax * (1 - ay),
                           w * (1 - ax) * ay, w * ax * ay])
    return np.bincount(idx, weights=vals, minlength=nx * ny).reshape(nx, ny)


def pushforward(P: GridDensity, T: GridMap) -> GridDensity:
    """``T_* P`` realized by splatting every cell's mass at its image."""
    if P.domain != T.domain:
        raise ValueError("measure and map live on different grids")
    m = splat(P.domain, T.map_x, T.map_y, P.mass)
    return GridDensity(P.domain, np.maximum(m, 0.0))


def laplacian_eigenvalues(domain: Domain) -> np.ndarray:
    """Eigenvalues of the 5-point Neumann ``-Laplacian`` in the DCT-II basis."""
    kx = np.arange(domain.nx)
    ky = np.arange(domain.ny)
    lx = (2.0 - 2.0 * np.cos(np.pi * kx / domain.nx)) / domain.dx ** 2
    ly = (2.0 - 2.0 * np.cos(np.pi * ky / domain.ny)) / domain.dy ** 2
    return lx[:, None] + ly[None, :]


def neg_laplacian(g, domain: Domain) -> np.ndarray:
    """5-point ``-Laplacian`` with reflecting (zero-flux) cell-centered boundaries."""
    p = np.pad(g, 1, mode="edge")
    lap_x = (2 * g - p[:-2, 1:-1] - p[2:, 1:-1]) / domain.dx ** 2
    lap_y = (2 * g - p[1:-1, :-2] - p[1:-1, 2:]) / domain.dy ** 2
    return lap_x + lap_y


def poisson_solve(residual, domain: Domain) -> np.ndarray:
    """Zero-mean solution of ``-Laplacian g = residual`` with Neumann boundary.

    The mean of ``residual`` is projected out first (the solvability
    condition). Diagonalized by the type-II cosine transform.
    """
    r = np.asarray(residual, dtype=float)
    if r.shape != domain.shape:
        raise ValueError("residual does not match the grid")
    coef = dctn(r - r.mean(), type=2, norm="ortho")
    lam = laplacian_eigenvalues(domain)
    lam[0, 0] = 1.0
    coef /= lam
    coef[0, 0] = 0.0
    return idctn(coef, type=2, norm="ortho")


@dataclass
class BFMParams:
    """Back-and-forth settings.

    ``sigma0`` defaults to ``cell_area / max(max P, max Q)``. ``radius`` is
    the search radius, in cells, of the interpolated c-transform.
    ``tie_tol`` (default ``0.01 * cell_area``) is the value gap under which
    two c-transform minimizers count as tied when the final map is selected.
    """

    sigma0: float | None = None
    max_iters: int = 300
    tol: float = 0.05
    sigma_min: float = 1e-12
    radius: int = 2
    tie_tol: float | None = None


@dataclass
class PotentialPair:
    """Dual potentials of the back-and-forth solve.

    ``phi`` lives on the target side and ``psi = phi^c`` on the source side.
    ``history`` holds ``J(phi)`` after the start and after every accepted
    update, so it is nondecreasing.
    """

    phi: np.ndarray
    psi: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0
    residual: float = np.inf
    converged: bool = False
    sigma: float = 0.0
    rejected_steps: int = 0
    backward_accepted: int = 0

    @property
    def dual_value(self) -> float:
        return self.history[-1]


class _Side:
    """Dual functional ``F(p) = <p, nu> + <p^c, mu>`` and its H^1 ascent direction."""

    def __init__(self, domain, mu, nu, radius):
        self.domain = domain
        self.mu = mu
        self.nu = nu
        self.radius = radius

    def evaluate(self, p):
        pc, tx, ty = ctransform_interpolated(p, self.domain, self.radius)
        value = float(np.sum(p * self.nu) + np.sum(pc * self.mu))
        pushed = splat(self.domain, tx, ty, self.mu)
        return _State(p, pc, value, pushed, tx, ty)

    def direction(self, state):
        return poisson_solve((self.nu - state.pushed) / self.domain.cell_area, self.domain)


@dataclass
class _State:
    p: np.ndarray
    pc: np.ndarray
    value: float
    pushed: np.ndarray
    tx: np.ndarray
    ty: np.ndarray


def back_and_forth(P: GridDensity, Q: GridDensity, params: BFMParams | None = None
                   ) -> tuple[PotentialPair, GridMap]:
    """Quadratic-cost transport map from ``P`` to ``Q`` by back-and-forth ascent.

    Each iteration takes an H^1 gradient step on ``J(phi) = <phi, Q> + <phi^c, P>``,
    then one on ``I(psi) = <psi, P> + <psi^c, Q>`` from ``psi = phi^c``, and
    returns to ``phi = psi^c``. c-transforms run against the bilinear
    interpolant of the potential (:func:`ctransform_interpolated`), which makes
    the splatted pushforward the exact supergradient of the dual.

    A gradient step is kept only if its functional does not decrease,
    otherwise the step size is halved; three accepted steps in a row grow
    it by 1.2. The return leg ``psi^c`` is kept only if it does not lower
    ``J``, since interpolation makes the double transform lossy at the
    ``O(dx^2)`` level. Stops once ``|T_* P - Q|_1 <= tol``.

    Raises
    ------
    NumericalError
        If the step size falls below ``sigma_min`` before convergence.
    """
    params = params or BFMParams()
    if P.domain != Q.domain:
        raise ValueError("P and Q must live on the same grid")
    if not (P.is_probability(1e-9) and Q.is_probability(1e-9)):
        raise InfeasibleError("back-and-forth needs two probability grids")
    dom = P.domain
    mu, nu = P.mass, Q.mass
    forward = _Side(dom, mu, nu, params.radius)
    backward = _Side(dom, nu, mu, params.radius)

    if params.sigma0 is None:
        sigma0 = dom.cell_area / max(mu.max(), nu.max())
    else:
        sigma0 = float(params.sigma0)
    sigma = {"forward": sigma0, "backward": sigma0}
    streak = {"forward": 0, "backward": 0}
    rejected = 0
    residual = np.inf

    def ascend(name, side, state):
        """One accepted step, or ``None`` once the step size underflows."""
        nonlocal rejected
        d = side.direction(state)
        slack = 1e-13 * max(1.0, abs(state.value))
        while sigma[name] >= params.sigma_min:
            trial = side.evaluate(state.p + sigma[name] * d)
            if trial.value >= state.value - slack:
                streak[name] += 1
                if streak[name] >= 3:
                    sigma[name] *= 1.2
                    streak[name] = 0
                return trial
            sigma[name] *= 0.5
            streak[name] = 0
            rejected += 1
        return None

    cur = forward.evaluate(np.zeros(dom.shape))
    history = [cur.value]
    backs = 0
    converged = False
    stalled = False
    it = 0
    for it in range(params.max_iters + 1):
        residual = float(np.abs(cur.pushed - nu).sum())
        if residual <= params.tol:
            converged = True
            break
        if it == params.max_iters:
            break
        nxt = ascend("forward", forward, cur)
        if nxt is not None:
            cur = nxt
            history.append(cur.value)
        # the return leg also serves to leave kinks where the forward step stalls
        back = None
        if sigma["backward"] >= params.sigma_min:
            back = ascend("backward", backward, backward.evaluate(cur.pc))
        if back is not None:
            candidate = forward.evaluate(back.pc)
            if candidate.value > cur.value or (nxt is not None and candidate.value == cur.value):
                cur = candidate
                history.append(cur.value)
                backs += 1
                if nxt is None:
                    sigma["forward"] = sigma0
                    nxt = cur
        if nxt is None:
            stalled = True
            break
        logger.debug("iteration %d: residual %.4g, dual %.8g", it, residual, cur.value)

    tx, ty = cur.tx, cur.ty
    if not converged:
        # near a maximum of the nonsmooth dual the minimizer is not unique;
        # pick among near-ties the selection whose pushforward best fits Q
        tie_tol = 0.01 * dom.cell_area if params.tie_tol is None else params.tie_tol
        tx, ty, residual = _select_map(cur, dom, mu, nu, params.radius, tie_tol)
        converged = residual <= params.tol
    if stalled and not converged:
        raise NumericalError(
            f"back-and-forth step size collapsed below {params.sigma_min:g} "
            f"after {it} iterations (dual value {cur.value:.6g}, "
            f"residual {residual:.3g}, {rejected} rejected steps)")
    if not converged:
        logger.warning("back-and-forth stopped after %d iterations, residual %.3g", it, residual)
    logger.info("back-and-forth: %d iterations, residual %.3g, dual %.6g",
                it, residual, cur.value)
    pair = PotentialPair(phi=cur.p, psi=cur.pc, history=history, iterations=it,
                         residual=residual, converged=converged, sigma=sigma["forward"],
                         rejected_steps=rejected, backward_accepted=backs)
    return pair, GridMap(dom, np.clip(tx, dom.x_min, dom.x_max),
                         np.clip(ty, dom.y_min, dom.y_max))


def _select_map(state, domain, mu, nu, radius, tie_tol, sweeps=10):
    xs, ys = domain.x_centers, domain.y_centers
    _, ai, aj = _ctransform_2d(np.ascontiguousarray(state.p), xs, ys)
    vals, cx, cy = _candidates(np.ascontiguousarray(state.p), xs, ys, ai, aj, int(radius))
    tx, ty = state.tx.copy(), state.ty.copy()
    push = state.pushed.copy()
    _select_ties(mu, nu, push, tx, ty, vals, cx, cy, float(tie_tol),
                 domain.x_min, domain.y_min, domain.dx, domain.dy, sweeps)
    push = splat(domain, tx, ty, mu)
    return tx, ty, float(np.abs(push - nu).sum())


def evaluate_map(T: GridMap, x) -> np.ndarray:
    """Bilinear interpolation of the map at arbitrary points of the domain.

    Accepts one 2-vector or an ``(n, 2)`` array; points outside the
    rectangle raise ``ValueError``.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dom = T.domain
    if not np.all(dom.contains(pts)):
        raise ValueError("point outside the map's domain")
    sx = np.clip((pts[:, 0] - dom.x_min) / dom.dx - 0.5, 0.0, dom.nx - 1.0)
    sy = np.clip((pts[:, 1] - dom.y_min) / dom.dy - 0.5, 0.0, dom.ny - 1.0)
    i0 = np.minimum(np.floor(sx).astype(int), dom.nx - 2)
    j0 = np.minimum(np.floor(sy).astype(int), dom.ny - 2)
    ax = (sx - i0)[:, None]
    ay = (sy - j0)[:, None]
    F = np.stack([T.map_x, T.map_y], axis=-1)
    out = ((1 - ax) * (1 - ay) * F[i0, j0] + ax * (1 - ay) * F[i0 + 1, j0]
           + (1 - ax) * ay * F[i0, j0 + 1] + ax * ay * F[i0 + 1, j0 + 1])
    return out[0] if single else out


def map_cost(P: GridDensity, T: GridMap) -> float:
    """``sum_x P(x) |x - T(x)|^2``, the squared-Euclidean cost of moving ``P`` by ``T``."""
    dx, dy = T.displacement()
    return float(np.sum(P.mass * (dx ** 2 + dy ** 2)))


def fraction_in_mask(P: GridDensity, T: GridMap, mask) -> float:
    """Share of ``P``'s mass whose image lands in a cell of ``mask``."""
    i, j = P.domain.cell_index(T.points())
    hit = np.asarray(mask, dtype=bool)[i, j].reshape(P.domain.shape)
    return float(np.sum(P.mass[hit]) / P.total)
