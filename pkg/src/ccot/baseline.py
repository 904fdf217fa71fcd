"""Individual (nearest-target) counterfactuals, the comparison baseline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cost import CostMatrix, build_cost


@dataclass
class ClassicCEResult:
    target_index: np.ndarray
    cost: np.ndarray
    mean_cost: float

    def save_csv(self, path) -> None:
        lines = ["source_id,target_id,cost"] + [
            f"{i},{j},{c:.17g}" for i, (j, c) in enumerate(zip(self.target_index, self.cost))]
        Path(path).write_text("\n".join(lines) + "\n")


def classic_ce(source_points, target_points, C: CostMatrix | None = None,
               kind: str = "euclidean", weights=None) -> ClassicCEResult:
    """Send every source point to its cheapest target.

    ``C`` defaults to ``build_cost(source_points, target_points, kind)``.
    Ties go to the lowest target index. ``mean_cost`` is weighted by
    ``weights`` when given, otherwise a plain mean over sources.
    """
    tgt = np.atleast_2d(np.asarray(target_points, dtype=float))
    if tgt.size == 0:
        raise ValueError("classic CE needs a nonempty target set")
    if C is None:
        C = build_cost(source_points, tgt, kind)
    vals = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    idx = np.argmin(vals, axis=1)
    costs = vals[np.arange(len(idx)), idx]
    mean = float(np.average(costs, weights=weights))
    return ClassicCEResult(idx, costs, mean)
