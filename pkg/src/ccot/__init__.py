"""Collective counterfactual explanations via optimal transport."""

from importlib import metadata

from .baseline import ClassicCEResult, classic_ce
from .bfm import (BFMParams, GridMap, PotentialPair, back_and_forth, ctransform_interpolated,
                  ctransform_quadratic, evaluate_map, poisson_solve, pushforward,
                  pushforward_map)
from .classifier import ConfidenceRegion, ScoreFunction, build_regions, confidence_threshold
from .cost import CostMatrix, build_cost, effective_cost
from .estimators import BackAndForthCCE, ClassicCE, CollectiveCE
from .exceptions import CCOTError, ConfigError, InfeasibleError, NumericalError
from .measures import (DiscreteMeasure, Domain, GaussianMixture, GridDensity, discretize,
                       gmm_pdf, sample, truncate)
from .metrics import extra_cost_percent, kl_divergence, transport_cost, wasserstein_estimate
from .oracle import assignment_oracle, tiny_lp_bound
from .paths import PathFrames, interpolate_measure, path_frames, trajectory
from .sinkhorn import (SinkhornParams, TransportPlan, UnbalancedParams, recommend,
                       sinkhorn, unbalanced_sinkhorn)

try:
    __version__ = metadata.version("ccot")
except metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "BFMParams", "BackAndForthCCE", "CCOTError", "ClassicCE", "ClassicCEResult",
    "CollectiveCE", "ConfidenceRegion", "ConfigError", "CostMatrix", "DiscreteMeasure",
    "Domain", "GaussianMixture", "GridDensity", "GridMap", "InfeasibleError",
    "NumericalError", "PathFrames", "PotentialPair", "ScoreFunction", "SinkhornParams",
    "TransportPlan", "UnbalancedParams", "assignment_oracle", "back_and_forth",
    "build_cost", "build_regions", "classic_ce", "confidence_threshold",
    "ctransform_interpolated", "ctransform_quadratic", "discretize", "effective_cost",
    "evaluate_map", "extra_cost_percent", "gmm_pdf", "interpolate_measure",
    "kl_divergence", "path_frames", "poisson_solve", "pushforward", "pushforward_map",
    "recommend", "sample", "sinkhorn", "tiny_lp_bound", "trajectory", "transport_cost",
    "truncate", "unbalanced_sinkhorn", "wasserstein_estimate",
]
