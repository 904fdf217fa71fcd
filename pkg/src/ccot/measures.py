"""Probability measures on a bounded rectangle.

Two representations are used throughout: :class:`GridDensity` stores cell
masses on a regular grid (the input of the grid solvers) and
:class:`DiscreteMeasure` stores a weighted point cloud (the input of the
Sinkhorn solvers).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import InfeasibleError

_NULL_MASS = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle discretized into ``nx * ny`` cells.

    Arrays indexed by the grid have shape ``(nx, ny)``: the first axis runs
    along x, the second along y.
    """

    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    nx: int = 64
    ny: int = 64

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("domain bounds must satisfy min < max")
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise ValueError("grid resolution must be integers >= 2")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as two ``(nx, ny)`` arrays."""
        return np.meshgrid(self.x_centers, self.y_centers, indexing="ij")

    def center_points(self) -> np.ndarray:
        """Cell centers as an ``(nx * ny, 2)`` array in row-major order."""
        X, Y = self.centers()
        return np.column_stack([X.ravel(), Y.ravel()])

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return ((p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max)
                & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max))

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Index of the cell containing each point (closed upper edge)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        i = np.floor((p[:, 0] - self.x_min) / self.dx).astype(int)
        j = np.floor((p[:, 1] - self.y_min) / self.dy).astype(int)
        return np.clip(i, 0, self.nx - 1), np.clip(j, 0, self.ny - 1)

    def same_grid(self, other: "Domain") -> bool:
        return self == other

    def downsample(self, factor: int) -> "Domain":
        if self.nx % factor or self.ny % factor:
            raise ValueError(f"grid {self.shape} not divisible by {factor}")
        return Domain(self.x_min, self.x_max, self.y_min, self.y_max,
                      self.nx // factor, self.ny // factor)


class GaussianMixture:
    """Finite mixture of bivariate normal distributions.

    Parameters
    ----------
    means : array-like, shape (k, 2)
    covariances : array-like, shape (k, 2, 2)
        Symmetric positive definite matrices.
    weights : array-like, shape (k,)
        Positive, summing to one within 1e-12.
    """

    def __init__(self, means, covariances, weights):
        self.means = np.asarray(means, dtype=float).reshape(-1, 2)
        self.covariances = np.asarray(covariances, dtype=float).reshape(-1, 2, 2)
        self.weights = np.asarray(weights, dtype=float).ravel()
        k = len(self.weights)
        if self.means.shape[0] != k or self.covariances.shape[0] != k:
            raise ValueError("means, covariances and weights disagree in length")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        diag = self.covariances[:, [0, 1], [0, 1]]
        if np.any(diag <= 0):
            raise ValueError("covariance diagonal entries must be positive")
        if not np.allclose(self.covariances, self.covariances.transpose(0, 2, 1)):
            raise ValueError("covariances must be symmetric")
        if np.any(np.linalg.det(self.covariances) <= 0):
            raise ValueError("covariances must be positive definite")

    @classmethod
    def from_diagonal(cls, means, diagonals, weights=None, diag_is_std: bool = False):
        """Build a mixture with diagonal covariances.

        ``diagonals`` are variances unless ``diag_is_std`` is set, in which
        case they are squared first.
        """
        d = np.asarray(diagonals, dtype=float).reshape(-1, 2)
        if diag_is_std:
            d = d ** 2
        k = d.shape[0]
        if weights is None:
            weights = np.full(k, 1.0 / k)
        covs = np.zeros((k, 2, 2))
        covs[:, 0, 0] = d[:, 0]
        covs[:, 1, 1] = d[:, 1]
        return cls(means, covs, weights)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def __repr__(self):
        return f"GaussianMixture(n_components={self.n_components})"


def two_blob_mixture(diag_is_std: bool = False) -> GaussianMixture:
    """The two-component mixture used by the bundled experiment presets."""
    return GaussianMixture.from_diagonal(
        [[0.3, 0.3], [0.7, 0.7]], [[0.2, 0.2], [0.2, 0.2]], [0.5, 0.5],
        diag_is_std=diag_is_std)


def gmm_pdf(gmm: GaussianMixture, x) -> np.ndarray | float:
    """Mixture density at one point (returns a float) or at ``(n, 2)`` points."""
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.zeros(pts.shape[0])
    for mu, cov, w in zip(gmm.means, gmm.covariances, gmm.weights):
        prec = np.linalg.inv(cov)
        d = pts - mu
        quad = np.einsum("ni,ij,nj->n", d, prec, d)
        out += w * np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(np.linalg.det(cov)))
    return float(out[0]) if scalar else out


@dataclass
class GridDensity:
    """Nonnegative cell masses on ``domain``; ``info`` carries diagnostics."""

    domain: Domain
    mass: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != self.domain.shape:
            raise ValueError(f"mass shape {self.mass.shape} != grid {self.domain.shape}")
        if not np.all(np.isfinite(self.mass)) or np.any(self.mass < 0):
            raise ValueError("cell masses must be finite and nonnegative")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def is_probability(self, atol: float = 1e-9) -> bool:
        return abs(self.total - 1.0) <= atol

    def density(self) -> np.ndarray:
        """Mass per unit area."""
        return self.mass / self.domain.cell_area

    def support(self) -> np.ndarray:
        return self.mass > 0

    def to_discrete(self) -> "DiscreteMeasure":
        """Atoms at the centers of cells with positive mass."""
        keep = self.mass.ravel() > 0
        return DiscreteMeasure(self.domain.center_points()[keep], self.mass.ravel()[keep])

    def downsample(self, factor: int) -> "GridDensity":
        """Aggregate ``factor x factor`` blocks of cells (mass is summed)."""
        dom = self.domain.downsample(factor)
        m = self.mass.reshape(dom.nx, factor, dom.ny, factor).sum(axis=(1, 3))
        return GridDensity(dom, m)


@dataclass
class DiscreteMeasure:
    """Weighted point cloud in the plane."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self):
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, atol: float = 1e-9) -> bool:
        return abs(self.total - 1.0) <= atol


def discretize(gmm: GaussianMixture, domain: Domain) -> GridDensity:
    """Midpoint-rule discretization of ``gmm`` on ``domain``, renormalized to mass 1.

    The factor that was divided out is kept in ``info["normalization"]``
    (the mixture probability captured by the grid, up to quadrature error).
    """
    pdf = gmm_pdf(gmm, domain.center_points()).reshape(domain.shape)
    raw = pdf * domain.cell_area
    total = raw.sum()
    if not total > 0 or not np.isfinite(total):
        raise InfeasibleError("degenerate discretization: mixture density vanishes on the grid")
    return GridDensity(domain, raw / total, info={"normalization": float(total)})


def sample(gmm: GaussianMixture, n: int, seed: int, return_components: bool = False):
    """Draw ``n`` equally weighted points from ``gmm``.

    Uses numpy's PCG64 bit generator, so a given seed yields bit-identical
    output on every platform.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    comp, pts = _draw(gmm, n, rng)
    m = DiscreteMeasure(pts, np.full(n, 1.0 / n))
    return (m, comp) if return_components else m


def _draw(gmm, n, rng):
    comp = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    z = rng.standard_normal((n, 2))
    chol = np.linalg.cholesky(gmm.covariances)
    pts = gmm.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)
    return comp, pts


def sample_region(gmm: GaussianMixture, n: int, seed: int,
                  predicate: Callable[[np.ndarray], np.ndarray],
                  domain: Domain | None = None, batch: int = 1024,
                  max_draws: int = 10_000_000) -> DiscreteMeasure:
    """Rejection-sample ``n`` points of ``gmm`` satisfying ``predicate``.

    This samples the truncated measure: draws outside ``domain`` or failing
    the predicate are discarded. ``predicate`` maps an ``(m, 2)`` array to a
    boolean vector.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    kept, count, drawn = [], 0, 0
    while count < n:
        if drawn >= max_draws:
            raise InfeasibleError("truncation over null set: region rejected every draw")
        _, pts = _draw(gmm, batch, rng)
        drawn += batch
        ok = np.asarray(predicate(pts), dtype=bool)
        if domain is not None:
            ok &= domain.contains(pts)
        kept.append(pts[ok])
        count += int(ok.sum())
    pts = np.concatenate(kept)[:n]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def truncate(m: GridDensity, mask) -> GridDensity:
    """Restrict ``m`` to ``mask`` and renormalize by the mass of the mask.

    A probability density that already lives inside ``mask`` is returned
    unchanged (copied), which makes the operation exactly idempotent.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != m.mass.shape:
        raise ValueError(f"mask shape {mask.shape} != grid {m.mass.shape}")
    kept = np.where(mask, m.mass, 0.0)
    p_a = kept.sum()
    if p_a < _NULL_MASS:
        raise InfeasibleError("truncation over null set")
    if not np.any(m.mass[~mask] > 0) and m.is_probability(1e-12):
        return GridDensity(m.domain, m.mass.copy(), info={"mask_probability": float(p_a)})
    return GridDensity(m.domain, kept / p_a, info={"mask_probability": float(p_a)})


def restrict_points(m: DiscreteMeasure, predicate) -> DiscreteMeasure:
    """Point-cloud analogue of :func:`truncate`.

    ``predicate`` is either a boolean vector over the points or a callable
    evaluated on the ``(n, 2)`` point array.
    """
    keep = predicate(m.points) if callable(predicate) else predicate
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (len(m),):
        raise ValueError("predicate must select over the points")
    w = m.weights[keep]
    total = w.sum()
    if not keep.any() or total < _NULL_MASS:
        raise InfeasibleError("truncation over null set: empty selection")
    if keep.all() and m.is_probability(1e-12):
        return DiscreteMeasure(m.points.copy(), m.weights.copy())
    return DiscreteMeasure(m.points[keep], w / total)


# ---------------------------------------------------------------- CSV I/O

GRID_HEADER = "nx,ny,x_min,x_max,y_min,y_max"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_grid_csv(path, domain: Domain, values, integer: bool = False) -> None:
    """Write a grid field: header line, domain line, then one row per x index."""
    values = np.asarray(values)
    if values.shape != domain.shape:
        raise ValueError("values do not match the grid")
    lines = [GRID_HEADER,
             ",".join([str(domain.nx), str(domain.ny)]
                      + [_fmt(v) for v in (domain.x_min, domain.x_max,
                                           domain.y_min, domain.y_max)])]
    for row in values:
        if integer:
            lines.append(",".join(str(int(v)) for v in row))
        else:
            lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path) -> tuple[Domain, np.ndarray]:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != GRID_HEADER:
        raise ValueError(f"{path}: missing grid header")
    head = rows[1].split(",")
    dom = Domain(float(head[2]), float(head[3]), float(head[4]), float(head[5]),
                 int(head[0]), int(head[1]))
    values = np.array([[float(v) for v in r.split(",")] for r in rows[2:]])
    return dom, values


def save_grid_density(path, g: GridDensity) -> None:
    write_grid_csv(path, g.domain, g.mass)


def load_grid_density(path) -> GridDensity:
    dom, values = read_grid_csv(path)
    return GridDensity(dom, values)


def save_discrete_measure(path, m: DiscreteMeasure) -> None:
    lines = ["x,y,w"] + [f"{_fmt(x)},{_fmt(y)},{_fmt(w)}"
                         for (x, y), w in zip(m.points, m.weights)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_discrete_measure(path) -> DiscreteMeasure:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DiscreteMeasure(data[:, :2], data[:, 2])

