"""Experiment pipeline: density, regions, solve, metrics, artifacts.

Every run writes plain CSV files plus ``manifest.json``, which records the
resolved config, derived quantities, library versions, output checksums and
stage timings. Apart from the timings, outputs are byte-identical for a
fixed config and seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from .baseline import classic_ce
from .bfm import BFMParams, back_and_forth, fraction_in_mask, map_cost, pushforward
from .classifier import ConfidenceRegion, ScoreFunction, build_regions, save_mask
from .config import FIGURES, Config, presets
from .cost import build_cost
from .exceptions import ConfigError
from .measures import (Domain, GaussianMixture, GridDensity, _fmt, discretize, sample_region,
                       save_discrete_measure, save_grid_density, truncate, write_grid_csv)
from .metrics import expected_recourse_cost, extra_cost_percent, kl_divergence
from .paths import path_frames
from .sinkhorn import (SinkhornParams, UnbalancedParams, recommend_all, sinkhorn,
                       unbalanced_sinkhorn)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SWEEP_HEADER = "lambda2,total_cost,extra_cost_pct,kl,log10_kl"


@dataclass
class Problem:
    domain: Domain
    mixture: GaussianMixture
    score: ScoreFunction
    density: GridDensity
    regions: ConfidenceRegion


def build_problem(cfg: Config) -> Problem:
    d = cfg.domain
    domain = Domain(d.x_min, d.x_max, d.y_min, d.y_max, cfg.grid.nx, cfg.grid.ny)
    gmm = GaussianMixture.from_diagonal(
        [c.mean for c in cfg.mixture], [c.cov_diag for c in cfg.mixture],
        [c.weight for c in cfg.mixture], diag_is_std=cfg.diag_is_std)
    if cfg.classifier.id is not None:
        f = ScoreFunction(cfg.classifier.id)
    else:
        w = np.asarray(cfg.classifier.custom.weights, dtype=float)
        b = float(cfg.classifier.custom.bias)
        f = ScoreFunction("custom", lambda p: np.asarray(p) @ w + b)
    P = discretize(gmm, domain)
    return Problem(domain, gmm, f, P, build_regions(P, f, cfg.delta))


def draw_samples(cfg: Config, prob: Problem):
    """Source samples from the negative region, targets from the delta band."""
    f, r = prob.score, prob.regions.r
    seed = cfg.samples.seed
    src = sample_region(prob.mixture, cfg.samples.n, seed, lambda x: f(x) < 0, prob.domain)
    tgt = sample_region(prob.mixture, cfg.samples.n, seed + 1,
                        lambda x: (f(x) > 0) & (f(x) <= r), prob.domain)
    return src, tgt


def write_pgm(path, domain: Domain, values) -> None:
    """8-bit binary graymap, x to the right and y upward, scaled to the maximum."""
    v = np.asarray(values, dtype=float)
    top = v.max()
    scaled = np.zeros_like(v) if not top > 0 else np.clip(v / top, 0.0, 1.0)
    img = np.round(255 * scaled).astype(np.uint8).T[::-1]
    header = f"P5\n{domain.nx} {domain.ny}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


class _Run:
    def __init__(self, cfg: Config, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.metrics: dict = {}
        self.derived: dict = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = time.perf_counter() - t0

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def manifest(self) -> dict:
        outputs = {}
        for p in sorted(set(self.files)):
            outputs[p.relative_to(self.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        data = {
            "manifest_version": MANIFEST_VERSION,
            "config": self.cfg.model_dump(mode="json"),
            "derived": self.derived,
            "metrics": self.metrics,
            "outputs": outputs,
            "versions": _versions(),
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }
        (self.out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return data


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("ccot", "numpy", "scipy", "numba", "scikit-learn", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_problem(run: _Run, prob: Problem) -> None:
    dom = prob.domain
    save_grid_density(run.path("density.csv"), prob.density)
    write_grid_csv(run.path("scores.csv"), dom, prob.regions.scores)
    save_mask(run.path("source_mask.csv"), dom, prob.regions.source_mask)
    save_mask(run.path("target_mask.csv"), dom, prob.regions.target_mask)
    if run.cfg.heatmaps:
        write_pgm(run.path("density.pgm"), dom, prob.density.mass)
        write_pgm(run.path("regions.pgm"), dom, prob.regions.source_mask * 0.5
                  + prob.regions.target_mask * 1.0)
    reg = prob.regions
    run.derived.update({"r": reg.r, "achieved_prob": reg.achieved_prob,
                        "normalization": prob.density.info.get("normalization")})


def _sample_solve(run: _Run, prob: Problem) -> None:
    cfg = run.cfg
    with run.stage("sample"):
        src, tgt = draw_samples(cfg, prob)
    save_discrete_measure(run.path("source_samples.csv"), src)
    save_discrete_measure(run.path("target_samples.csv"), tgt)
    C = build_cost(src.points, tgt.points, cfg.cost.kind, cfg.cost.p)
    with run.stage("baseline"):
        base = classic_ce(src.points, tgt.points, C, weights=src.weights)
    base.save_csv(run.path("classic_ce.csv"))
    run.metrics["baseline_cost"] = base.mean_cost
    if cfg.solver.name == "classic":
        return
    s = cfg.solver
    eps = s.epsilon if s.epsilon is not None else s.epsilon_scale * C.mean()
    run.derived["epsilon"] = float(eps)
    with run.stage("solve"):
        if s.name == "sinkhorn":
            plan = sinkhorn(src.weights, tgt.weights, C,
                            SinkhornParams(eps, s.iterations(), s.tolerance()))
        else:
            plan = unbalanced_sinkhorn(src.weights, tgt.weights, C, UnbalancedParams(
                eps, s.iterations(), s.tolerance(), lambda1=s.lambda1, lambda2=s.lambda2))
    plan.save_csv(run.path("plan.csv"))
    idx = recommend_all(plan)
    lines = ["source_id,target_id,cost"]
    for i, j in enumerate(idx):
        lines.append(f"{i},{j},{_fmt(C.values[i, j]) if j >= 0 else 'nan'}")
    run.path("recommendations.csv").write_text("\n".join(lines) + "\n")
    cce = expected_recourse_cost(plan.matrix, C.values, src.weights)
    run.metrics.update({
        "cce_cost": cce,
        "plan_cost": plan.total_cost,
        "extra_cost_pct": extra_cost_percent(cce, base.mean_cost),
        "kl_target": kl_divergence(plan.tgt_marginal, tgt.weights),
        "solver": plan.diagnostics(),
    })


def _bfm_solve(run: _Run, prob: Problem) -> None:
    cfg = run.cfg
    if cfg.cost.kind != "squared_euclidean":
        raise ValueError("the bfm solver needs cost.kind = 'squared_euclidean'")
    reg = prob.regions
    Pm = truncate(prob.density, reg.source_mask)
    Qd = truncate(prob.density, reg.target_mask)
    s = cfg.solver
    params = BFMParams(sigma0=s.sigma0, max_iters=s.iterations(), tol=s.tolerance())
    with run.stage("solve"):
        pair, T = back_and_forth(Pm, Qd, params)
    dom = prob.domain
    save_grid_density(run.path("source_density.csv"), Pm)
    save_grid_density(run.path("target_density.csv"), Qd)
    write_grid_csv(run.path("phi.csv"), dom, pair.phi)
    write_grid_csv(run.path("psi.csv"), dom, pair.psi)
    T.save_csv(str(run.out / "map"))
    run.files += [run.out / "map_x.csv", run.out / "map_y.csv"]
    pushed = pushforward(Pm, T)
    save_grid_density(run.path("pushforward.csv"), pushed)
    run.path("dual_history.csv").write_text(
        "step,dual\n" + "".join(f"{k},{_fmt(v)}\n" for k, v in enumerate(pair.history)))
    if cfg.heatmaps:
        write_pgm(run.path("pushforward.pgm"), dom, pushed.mass)
    run.metrics.update({
        "iterations": pair.iterations,
        "residual_l1": float(np.abs(pushed.mass - Qd.mass).sum()),
        "converged": pair.converged,
        "dual_value": pair.dual_value,
        "map_cost": map_cost(Pm, T),
        "fraction_in_target": fraction_in_mask(Pm, T, reg.target_mask),
        "rejected_steps": pair.rejected_steps,
    })
    if cfg.paths is not None:
        with run.stage("paths"):
            src, _ = draw_samples(cfg, prob)
            frames = path_frames(Pm, T, cfg.paths.frames, points=src.points)
            written = frames.save(run.out / "paths")
        run.files += written


def run_experiment(cfg: Config, out_dir) -> dict:
    """Execute one config and write its artifacts into ``out_dir``."""
    run = _Run(cfg, out_dir)
    logger.info("run %s: solver %s", cfg.name, cfg.solver.name)
    with run.stage("problem"):
        prob = build_problem(cfg)
    _write_problem(run, prob)
    if cfg.solver.name == "bfm":
        _bfm_solve(run, prob)
    elif cfg.solver.name != "none":
        _sample_solve(run, prob)
    return run.manifest()


def run_sweep(cfg: Config, out_dir, values=None) -> dict:
    """Unbalanced solves over ``lambda2`` on one fixed sample set."""
    if values is None:
        values = (cfg.sweep.lambda2 if cfg.sweep is not None
                  else [round(0.1 * k, 10) for k in range(11)])
    values = [float(v) for v in values]
    if any(v < 0 for v in values):
        raise ValueError("lambda2 values must be nonnegative")
    run = _Run(cfg, out_dir)
    with run.stage("problem"):
        prob = build_problem(cfg)
    _write_problem(run, prob)
    src, tgt = draw_samples(cfg, prob)
    save_discrete_measure(run.path("source_samples.csv"), src)
    save_discrete_measure(run.path("target_samples.csv"), tgt)
    C = build_cost(src.points, tgt.points, cfg.cost.kind, cfg.cost.p)
    base = classic_ce(src.points, tgt.points, C, weights=src.weights)
    s = cfg.solver
    eps = s.epsilon if s.epsilon is not None else s.epsilon_scale * C.mean()
    run.derived.update({"epsilon": float(eps), "lambda1": s.lambda1, "kl_log_base": 10})
    rows = [SWEEP_HEADER]
    table = []
    with run.stage("sweep"):
        for lam in values:
            plan = unbalanced_sinkhorn(src.weights, tgt.weights, C, UnbalancedParams(
                eps, s.iterations(), s.tolerance(), lambda1=s.lambda1, lambda2=lam))
            cost = expected_recourse_cost(plan.matrix, C.values, src.weights)
            kl = kl_divergence(plan.tgt_marginal, tgt.weights)
            extra = extra_cost_percent(cost, base.mean_cost)
            log_kl = np.log10(kl) if kl > 0 else -np.inf
            table.append((lam, cost, extra, kl, log_kl))
            rows.append(",".join(_fmt(v) for v in (lam, cost, extra, kl, log_kl)))
    run.path("sweep.csv").write_text("\n".join(rows) + "\n")
    run.metrics.update({"baseline_cost": base.mean_cost, "points": len(values)})
    manifest = run.manifest()
    manifest["table"] = table
    return manifest


def run_paths(cfg: Config, out_dir) -> dict:
    """Back-and-forth solve followed by displacement-interpolation frames."""
    frames = cfg.paths.frames if cfg.paths is not None else 5
    cfg = cfg.replace(solver={"name": "bfm"},
                      cost={"kind": "squared_euclidean", "p": None},
                      paths={"frames": frames})
    return run_experiment(cfg, out_dir)


def reproduce(figure: str, out_dir, seed: int | None = None) -> dict:
    """Run every preset of ``figure`` into ``out_dir/<figure>/<run>``."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; expected one of {', '.join(FIGURES)}")
    root = Path(out_dir) / figure
    runs = {}
    for name, cfg in presets(figure):
        cfg = cfg.with_seed(seed)
        target = root / name
        if cfg.sweep is not None:
            m = run_sweep(cfg, target)
            m.pop("table", None)
        else:
            m = run_experiment(cfg, target)
        runs[name] = {"manifest": f"{name}/manifest.json", "metrics": m["metrics"]}
    summary = {"figure": figure, "manifest_version": MANIFEST_VERSION, "runs": runs}
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
