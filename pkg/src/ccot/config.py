"""Experiment configuration: a strict JSON schema and the figure presets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Strict):
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("domain bounds must satisfy min < max")
        return self


class GridConfig(_Strict):
    nx: int = Field(64, ge=2)
    ny: int = Field(64, ge=2)


class ComponentConfig(_Strict):
    mean: tuple[float, float]
    cov_diag: tuple[float, float]
    weight: float = Field(gt=0)


class LinearScore(_Strict):
    """``f(x) = weights . x + bias``."""

    weights: tuple[float, float]
    bias: float = 0.0


class ClassifierConfig(_Strict):
    id: Literal["f1", "f2", "f3"] | None = None
    custom: LinearScore | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.id is None) == (self.custom is None):
            raise ValueError("classifier needs exactly one of 'id' or 'custom'")
        return self


class CostConfig(_Strict):
    kind: Literal["squared_euclidean", "euclidean", "p_power", "l1"] = "euclidean"
    p: float | None = None


class SolverConfig(_Strict):
    """``epsilon`` is absolute; when absent it is ``epsilon_scale * mean(C)``.

    ``max_iters`` and ``tol`` default per solver: 10000 and 1e-9 for the
    Sinkhorn family, 300 and 0.05 (pushforward L1 residual) for ``bfm``.
    """

    name: Literal["none", "classic", "sinkhorn", "uot", "bfm"] = "sinkhorn"
    epsilon: float | None = Field(None, gt=0)
    epsilon_scale: float = Field(0.01, gt=0)
    lambda1: float = Field(1.0, ge=0)
    lambda2: float = Field(1.0, ge=0)
    max_iters: int | None = Field(None, ge=1)
    tol: float | None = Field(None, gt=0)
    sigma0: float | None = Field(None, gt=0)

    def iterations(self) -> int:
        return self.max_iters or (300 if self.name == "bfm" else 10_000)

    def tolerance(self) -> float:
        return self.tol or (0.05 if self.name == "bfm" else 1e-9)


class SamplesConfig(_Strict):
    n: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)


class PathsConfig(_Strict):
    frames: int = Field(5, ge=2)


class SweepConfig(_Strict):
    lambda2: list[float] = Field(
        default_factory=lambda: [round(0.1 * k, 10) for k in range(11)], min_length=1)


def _two_blob_components():
    return [ComponentConfig(mean=(0.3, 0.3), cov_diag=(0.2, 0.2), weight=0.5),
            ComponentConfig(mean=(0.7, 0.7), cov_diag=(0.2, 0.2), weight=0.5)]


class Config(_Strict):
    """One experiment. ``cov_diag`` entries are variances unless ``diag_is_std``."""

    name: str = "run"
    domain: DomainConfig = DomainConfig()
    grid: GridConfig = GridConfig()
    mixture: list[ComponentConfig] = Field(default_factory=_two_blob_components, min_length=1)
    diag_is_std: bool = False
    classifier: ClassifierConfig = ClassifierConfig(id="f1")
    delta: float = Field(0.2, gt=0, lt=1)
    cost: CostConfig = CostConfig()
    solver: SolverConfig = SolverConfig()
    samples: SamplesConfig = SamplesConfig()
    paths: PathsConfig | None = None
    sweep: SweepConfig | None = None
    heatmaps: bool = True

    def with_seed(self, seed: int | None) -> "Config":
        if seed is None:
            return self
        return self.model_copy(update={"samples": self.samples.model_copy(update={"seed": seed})})

    def replace(self, **changes) -> "Config":
        """Copy with validated changes; nested sections accept dicts."""
        data = self.model_dump()
        for key, value in changes.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return Config.model_validate(data)


def _format_error(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "invalid config: " + "; ".join(parts)


def parse_config(data: dict) -> Config:
    try:
        return Config.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> Config:
    """Read a config file, or the ``config`` section of a run manifest."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "manifest_version" in data and "config" in data:
        data = data["config"]
    return parse_config(data)


FIGURES = ("fig4", "fig5", "fig6", "fig7", "fig8")


def presets(figure: str) -> list[tuple[str, Config]]:
    """Named runs making up one figure.

    All share the two-component mixture, ``delta = 0.2``, 100 samples and
    Euclidean cost; the map figure uses the quadratic cost its solver needs.
    """
    base = Config()
    if figure == "fig4":
        return [("regions", base.replace(name="fig4", solver={"name": "none"}))]
    if figure == "fig5":
        runs = [("classic", base.replace(name="fig5-classic", solver={"name": "classic"})),
                ("sinkhorn", base.replace(name="fig5-sinkhorn", solver={"name": "sinkhorn"}))]
        for lam in (0.0, 0.5, 1.0):
            runs.append((f"uot_lambda2_{lam:g}", base.replace(
                name=f"fig5-uot-{lam:g}", solver={"name": "uot", "lambda1": 1.0, "lambda2": lam})))
        return runs
    if figure == "fig6":
        return [("sweep", base.replace(name="fig6", solver={"name": "uot", "lambda1": 1.0},
                                       sweep=SweepConfig().model_dump()))]
    if figure == "fig7":
        f3 = base.replace(classifier={"id": "f3", "custom": None})
        return [("classic", f3.replace(name="fig7-classic", solver={"name": "classic"})),
                ("sinkhorn", f3.replace(name="fig7-sinkhorn", solver={"name": "sinkhorn"})),
                ("uot", f3.replace(name="fig7-uot", solver={"name": "uot", "lambda2": 0.5}))]
    if figure == "fig8":
        return [("bfm", base.replace(name="fig8", cost={"kind": "squared_euclidean"},
                                     solver={"name": "bfm"}, paths={"frames": 5}))]
    raise ConfigError(f"unknown figure {figure!r}; expected one of {', '.join(FIGURES)}")
