"""Seeded simulation sweeps: estimator accuracy in KW distance as n grows."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checks import degenerate_log_likelihood, degenerate_sequence_demo
from .errors import ContractViolation, MixlabError
from .estimators import PENALIZED, PLAIN, FitConfig, em_fit
from .metrics import kw_distance
from .model import NORMAL_FREE, ComponentFamily, MixingDistribution, sample_mixture

log = logging.getLogger(__name__)

CSV_COLUMNS = ["n", "rep", "kw_dist", "objective", "converged", "wall_time_ms"]


@dataclass(frozen=True)
class ExperimentConfig:
    family: ComponentFamily
    G_star: MixingDistribution
    n_grid: tuple
    reps: int
    fit: FitConfig
    master_seed: int = 0
    output_path: str | None = None
    workers: int = 1

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ContractViolation("n_grid must be nonempty and strictly increasing")
        if self.reps < 1:
            raise ContractViolation("reps must be >= 1")
        object.__setattr__(self, "n_grid", grid)

    @property
    def kw_dim(self) -> int:
        if self.fit.family.kind == NORMAL_FREE and self.G_star.has_scale:
            return 2
        return 1

    def to_dict(self):
        return {
            "family": self.family.to_dict(),
            "G_star": self.G_star.to_dict(),
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "fit": self.fit.to_dict(),
            "master_seed": self.master_seed,
            "output_path": self.output_path,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=ComponentFamily.from_dict(d["family"]),
            G_star=MixingDistribution.from_dict(d["G_star"]),
            n_grid=tuple(d["n_grid"]),
            reps=int(d["reps"]),
            fit=FitConfig.from_dict(d["fit"]),
            master_seed=int(d.get("master_seed", 0)),
            output_path=d.get("output_path"),
            workers=int(d.get("workers", 1)),
        )


@dataclass
class ReplicationResult:
    n: int
    rep: int
    kw_dist: float
    objective: float
    converged: bool
    wall_time_ms: int
    sigma2: float | None = None
    min_scale: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def row(self):
        return {k: getattr(self, k) for k in CSV_COLUMNS}


def replication_seeds(master_seed: int, n: int, rep: int):
    """(sample seed, fit seed) derived from (master_seed, n, rep) only."""
    state = np.random.SeedSequence([master_seed, n, rep]).generate_state(2)
    return int(state[0]), int(state[1])


def run_replication(cfg: ExperimentConfig, n: int, rep: int) -> ReplicationResult:
    sample_seed, fit_seed = replication_seeds(cfg.master_seed, n, rep)
    start = time.perf_counter()
    try:
        sample = sample_mixture(cfg.family, cfg.G_star, n, sample_seed)
        report = em_fit(replace(cfg.fit, seed=fit_seed), sample)
        kw = kw_distance(report.estimate, cfg.G_star, cfg.kw_dim).value
    except MixlabError as exc:
        ms = int(round((time.perf_counter() - start) * 1000))
        return ReplicationResult(n, rep, math.inf, math.nan, False, ms, error=str(exc))
    ms = int(round((time.perf_counter() - start) * 1000))
    min_scale = float(report.estimate.scales.min()) if report.estimate.has_scale else None
    return ReplicationResult(n, rep, kw, report.objective, report.converged, ms,
                             sigma2=report.sigma2, min_scale=min_scale)


def _tasks(cfg):
    return [(n, rep) for n in cfg.n_grid for rep in range(cfg.reps)]


def _run_all(cfg: ExperimentConfig, worker, extra=(), on_result=None):
    results = {}
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(worker, cfg, n, rep, *extra): (n, rep) for n, rep in _tasks(cfg)}
            for fut in as_completed(futures):
                res = fut.result()
                results[futures[fut]] = res
                if on_result:
                    on_result(res)
    else:
        for n, rep in _tasks(cfg):
            res = worker(cfg, n, rep, *extra)
            results[(n, rep)] = res
            if on_result:
                on_result(res)
    return [results[key] for key in _tasks(cfg)]


def summarize(results) -> dict:
    """Per-n median, quartiles and failure count of the KW distances."""
    out = {}
    for n in sorted({r.n for r in results}):
        rows = [r for r in results if r.n == n]
        kw = np.array([r.kw_dist for r in rows if not r.failed])
        entry = {"failures": sum(r.failed for r in rows), "reps": len(rows)}
        if kw.size:
            q25, med, q75 = np.quantile(kw, [0.25, 0.5, 0.75])
            entry.update(median=float(med), q25=float(q25), q75=float(q75))
        else:
            entry.update(median=None, q25=None, q75=None)
        s2 = [r.sigma2 for r in rows if r.sigma2 is not None and not r.failed]
        if s2:
            entry["sigma2_median"] = float(np.median(s2))
        out[str(n)] = entry
    return out


def write_results(results, path, summary=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(r.row())
    if summary is not None:
        with open(summary_path(path), "w") as fh:
            json.dump(summary, fh, indent=2)


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


class _Streamer:
    """Appends each finished replication to ``<output>.partial`` as it arrives."""

    def __init__(self, path):
        self.path = Path(str(path) + ".partial")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=CSV_COLUMNS)
        self.writer.writeheader()

    def __call__(self, res):
        self.writer.writerow(res.row())
        self.fh.flush()

    def close(self):
        self.fh.close()
        self.path.unlink(missing_ok=True)


def run_consistency(cfg: ExperimentConfig):
    """Sample, fit and measure D_KW(estimate, G*) for every (n, rep).

    Returns the results in (n, rep) order.  Individual failures are recorded
    with ``kw_dist=inf`` and never abort the sweep.
    """
    streamer = _Streamer(cfg.output_path) if cfg.output_path else None
    try:
        results = _run_all(cfg, run_replication, on_result=streamer)
    finally:
        if streamer:
            streamer.close()
    if cfg.output_path:
        write_results(results, cfg.output_path, summarize(results))
    return results


def crossing_log10_k(values, target: float, hi: float = 5000.0) -> float:
    """Smallest log10 k at which l_n(G_k) exceeds ``target`` (inf if beyond ``hi``)."""
    ln10 = math.log(10.0)

    def excess(l10):
        return degenerate_log_likelihood(values, l10 * ln10) - target

    grid = np.arange(0.0, hi + 1.0)
    prev = None
    for l10 in grid:
        if excess(l10) > 0:
            if prev is None:
                return 0.0
            lo, up = prev, l10
            for _ in range(60):
                mid = 0.5 * (lo + up)
                lo, up = (lo, mid) if excess(mid) > 0 else (mid, up)
            return up
        prev = l10
    return math.inf


@dataclass
class DegeneracyRow:
    n: int
    rep: int
    penalized_objective: float
    kw_dist: float
    min_scale_ratio: float
    max_plain_loglik: float
    plain_exceeds: bool
    bound_holds: bool
    crossing_log10_k: float
    quantile_plain_objective: float
    quantile_plain_degenerate: bool
    error: str | None = None


@dataclass
class DegeneracyReport:
    k_list: list
    rows: list = field(default_factory=list)

    @property
    def plain_exceeds_count(self) -> int:
        return sum(r.plain_exceeds for r in self.rows)

    @property
    def nondegenerate_penalized_count(self) -> int:
        return sum(r.min_scale_ratio >= 1e-3 for r in self.rows)

    def to_dict(self):
        return {
            "k_list": self.k_list,
            "replications": len(self.rows),
            "plain_exceeds_penalized": self.plain_exceeds_count,
            "penalized_min_scale_ratio_ok": self.nondegenerate_penalized_count,
            "median_crossing_log10_k": float(np.median([r.crossing_log10_k for r in self.rows]))
            if self.rows else None,
            "rows": [asdict(r) for r in self.rows],
        }


def _degeneracy_replication(cfg: ExperimentConfig, n: int, rep: int, k_list):
    sample_seed, fit_seed = replication_seeds(cfg.master_seed, n, rep)
    x = sample_mixture(cfg.family, cfg.G_star, n, sample_seed).values
    try:
        pen = em_fit(replace(cfg.fit, seed=fit_seed), x)
        demo = degenerate_sequence_demo(x, k_list)
        plain = em_fit(replace(cfg.fit, mode=PLAIN, penalty=None, seed=fit_seed), x)
    except MixlabError as exc:
        return DegeneracyRow(n, rep, math.nan, math.inf, math.nan, math.nan, False, False,
                             math.nan, math.nan, False, error=str(exc))
    lls = demo.data["loglik"]
    s_n = math.sqrt(float(np.var(x)))
    return DegeneracyRow(
        n=n,
        rep=rep,
        penalized_objective=pen.objective,
        kw_dist=kw_distance(pen.estimate, cfg.G_star, cfg.kw_dim).value,
        min_scale_ratio=float(pen.estimate.scales.min()) / s_n,
        max_plain_loglik=max(lls),
        plain_exceeds=max(lls) > pen.objective,
        bound_holds=demo.data["bound_margin"] >= 0,
        crossing_log10_k=crossing_log10_k(x, pen.objective),
        quantile_plain_objective=plain.objective,
        quantile_plain_degenerate=plain.degenerate,
    )


def run_degeneracy_comparison(cfg: ExperimentConfig, k_list) -> DegeneracyReport:
    """Juxtapose the plain likelihood along G_k with the penalized fit.

    The plain EM run from the quantile initialiser is recorded for reference
    only; it usually settles at an interior local maximum.
    """
    if cfg.fit.family.kind != NORMAL_FREE or cfg.fit.mode != PENALIZED:
        raise ContractViolation("degeneracy comparison needs a penalized free-variance fit")
    rows = _run_all(cfg, _degeneracy_replication, extra=(list(k_list),))
    report = DegeneracyReport(list(k_list), rows)
    if cfg.output_path:
        path = Path(cfg.output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report
