"""Displacement interpolation between a population and its counterfactual target.

For quadratic cost the optimal map ``T`` induces the constant-speed geodesic
``mu_t = ((1 - t) id + t T)_* P``; individual points travel on straight
segments from ``x`` to ``T(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bfm import GridMap, evaluate_map, splat
from .measures import GridDensity, _fmt, save_grid_density

QUADRATIC = "squared_euclidean"


def _require_quadratic(kind: str) -> None:
    if kind != QUADRATIC:
        raise ValueError(
            f"displacement interpolation needs the quadratic cost, got {kind!r}; "
            "straight-line paths are geodesics only when c(x, y) = |x - y|^2 / 2")


def _check_time(t) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


def interpolate_measure(P: GridDensity, T: GridMap, t: float,
                        cost_kind: str = QUADRATIC) -> GridDensity:
    """``mu_t``: every cell's mass splatted at ``(1 - t) x + t T(x)``.

    ``t = 0`` returns ``P`` itself, since splatting at cell centers is the
    identity.
    """
    _require_quadratic(cost_kind)
    t = _check_time(t)
    if P.domain != T.domain:
        raise ValueError("measure and map live on different grids")
    X, Y = P.domain.centers()
    px = (1.0 - t) * X + t * T.map_x
    py = (1.0 - t) * Y + t * T.map_y
    mass = splat(P.domain, px, py, P.mass)
    return GridDensity(P.domain, np.maximum(mass, 0.0), {"t": t})


def trajectory(x, T: GridMap, k: int, cost_kind: str = QUADRATIC) -> np.ndarray:
    """``k`` equally spaced points on the segment from ``x`` to ``T(x)``.

    Returns a ``(k, 2)`` array; row ``j`` sits at ``t_j = j / (k - 1)``.
    """
    _require_quadratic(cost_kind)
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("x must be a 2-vector")
    end = evaluate_map(T, x)
    t = np.linspace(0.0, 1.0, int(k))[:, None]
    return (1.0 - t) * x + t * end


@dataclass
class PathFrames:
    """Frames of the displacement interpolation.

    ``frames[j]`` is ``mu_{times[j]}``; ``trajectories[i]`` holds the path of
    ``points[i]`` sampled at ``times``.
    """

    times: np.ndarray
    frames: list
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    trajectories: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 2)))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] != 0.0 or self.times[-1] != 1.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase from 0 to 1")
        if len(self.frames) != len(self.times):
            raise ValueError("one frame per time is required")

    def save(self, out_dir, prefix: str = "frame") -> list[Path]:
        """One grid CSV per frame plus ``trajectories.csv`` (``point_id,t,x,y``)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for j, frame in enumerate(self.frames):
            path = out / f"{prefix}_{j:03d}.csv"
            save_grid_density(path, frame)
            written.append(path)
        path = out / "trajectories.csv"
        with open(path, "w", newline="\n") as fh:
            fh.write("point_id,t,x,y\n")
            for i, traj in enumerate(self.trajectories):
                for t, (px, py) in zip(self.times, traj):
                    fh.write(f"{i},{_fmt(t)},{_fmt(px)},{_fmt(py)}\n")
        written.append(path)
        return written


def path_frames(P: GridDensity, T: GridMap, k: int, points=None,
                cost_kind: str = QUADRATIC) -> PathFrames:
    """Measure frames and point trajectories at ``t_j = j / (k - 1)``."""
    _require_quadratic(cost_kind)
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    times = np.linspace(0.0, 1.0, int(k))
    frames = [P if t == 0.0 else interpolate_measure(P, T, t) for t in times]
    pts = np.empty((0, 2)) if points is None else np.atleast_2d(np.asarray(points, float))
    trajs = np.array([trajectory(p, T, k) for p in pts]).reshape(len(pts), int(k), 2)
    return PathFrames(times, frames, pts, trajs)
