"""Synthetic-experiment harness.

Random sparse SEMs, soft interventions on uniformly drawn target sets,
trial execution against ground truth, precision/recall aggregation for
hyperparameter sweeps, and decomposition-size statistics.  Every trial is
reproducible from ``(seed, trial)`` alone and results are independent of
worker count: trial streams never interact and aggregation sorts before
reducing.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from .estimator import CiteConfig, TargetEstimate, estimate_targets
from .oracle import GroundTruth, _ground_truth, ground_truth_answers
from .pde import CovariancePair, empirical_pair
from .sem import (
    InterventionSpec,
    LinearSem,
    apply_intervention,
    build_dag,
    check_i_faithfulness,
    population_covariance,
    population_second_moment,
    sample,
)

__all__ = [
    "TrialConfig",
    "Metrics",
    "TrialResult",
    "CellSummary",
    "SweepOutcome",
    "ComplexityStats",
    "generate_er_sem",
    "run_trial",
    "evaluate",
    "sweep",
    "complexity_stats",
]


def generate_er_sem(
    p: int,
    c: float,
    weight_range: tuple[float, float] = (0.25, 1.0),
    seed: int | np.random.SeedSequence | np.random.Generator = 0,
) -> LinearSem:
    """Random sparse linear SEM with expected neighborhood size ``c``.

    Draws a uniform node permutation, keeps each forward pair as an edge
    independently with probability ``c/(p-1)`` (expected total degree ``c``
    per node), and assigns weights uniform on ``±[low, high]``.  Unit noise
    variances, zero noise means.
    """
    if p < 1:
        raise ValueError(f"need at least one node, got {p}")
    if not 0 < c < p:
        raise ValueError(f"neighborhood size must lie in (0, {p}), got {c}")
    low, high = weight_range
    if not 0 < low <= high:
        raise ValueError(f"invalid weight magnitude range {weight_range}")

    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(seed)
    )
    order = rng.permutation(p)
    pairs = [(a, b) for a in range(p) for b in range(a + 1, p)]
    edges: list[tuple[int, int]] = []
    if pairs:
        keep = rng.random(len(pairs)) < c / (p - 1)
        edges = [
            (int(order[a]), int(order[b]))
            for (a, b), k in zip(pairs, keep)
            if k
        ]
    magnitudes = rng.uniform(low, high, size=len(edges))
    signs = rng.integers(0, 2, size=len(edges)) * 2 - 1

    b = np.zeros((p, p))
    for (i, j), mag, sign in zip(edges, magnitudes, signs):
        b[i, j] = sign * mag
    return LinearSem(build_dag(p, edges), b, np.ones(p))


@dataclass(frozen=True)
class TrialConfig:
    """One synthetic trial: graph size/density, intervention, sample size.

    ``n = 0`` means population covariances (exact second moments) instead
    of samples.  ``trial`` indexes the private RNG stream derived from
    ``(seed, trial)``.  With ``require_faithful`` set, instances failing
    the faithfulness check are redrawn (bounded by ``max_redraws``) and
    the redraw count is reported on the result.
    """

    p: int
    c: float
    target_count: int
    model: Literal["shift", "variance", "randomized"] = "variance"
    n: int = 0
    seed: int = 0
    trial: int = 0
    estimator: CiteConfig = CiteConfig()
    delta: float = 1.0
    sigma_new: float | None = None
    weight_range: tuple[float, float] = (0.25, 1.0)
    center: bool = False
    require_faithful: bool = False
    max_redraws: int = 50

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"need at least one node, got {self.p}")
        if not 0 <= self.target_count <= self.p:
            raise ValueError(f"target count {self.target_count} out of range")
        if self.n < 0:
            raise ValueError(f"negative sample size {self.n}")


@dataclass(frozen=True)
class Metrics:
    """Set-recovery scores for targets and for parent edges.

    Empty-denominator convention: precision of an empty estimate and
    recall of an empty truth are 1; F1 is 0 whenever precision + recall
    is 0.
    """

    precision: float
    recall: float
    f1: float
    parent_precision: float
    parent_recall: float
    parent_f1: float
    exact_target_match: bool
    exact_parent_match: bool


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one trial; ``error`` is set instead of metrics when the
    estimator raised (batch runs record failures rather than aborting)."""

    config: TrialConfig
    targets_true: tuple[int, ...]
    targets_est: tuple[int, ...]
    parents_true: tuple[tuple[int, int], ...]
    parents_est: tuple[tuple[int, int], ...]
    metrics: Metrics | None
    p_delta: int
    max_class_size: int
    pde_call_count: int
    redraws: int
    wall_time: float
    error: str | None = None


def _ratio(hits: int, total: int) -> float:
    return 1.0 if total == 0 else hits / total


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(estimate: TargetEstimate, truth: GroundTruth) -> Metrics:
    """Score an estimate against the ground-truth record."""
    est, true = estimate.targets, truth.targets
    precision = _ratio(len(est & true), len(est))
    recall = _ratio(len(est & true), len(true))
    pest, ptrue = estimate.parents, truth.parents
    parent_precision = _ratio(len(pest & ptrue), len(pest))
    parent_recall = _ratio(len(pest & ptrue), len(ptrue))
    return Metrics(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        parent_precision=parent_precision,
        parent_recall=parent_recall,
        parent_f1=_f1(parent_precision, parent_recall),
        exact_target_match=est == true,
        exact_parent_match=pest == ptrue,
    )


def _draw_instance(
    config: TrialConfig, attempt: int
) -> tuple[LinearSem, LinearSem, tuple[int, ...], np.random.SeedSequence]:
    root = np.random.SeedSequence([config.seed, config.trial, attempt])
    graph_ss, target_ss, sample_ss = root.spawn(3)
    sem1 = generate_er_sem(config.p, config.c, config.weight_range, graph_ss)
    target_rng = np.random.default_rng(target_ss)
    targets = tuple(
        sorted(
            int(v)
            for v in target_rng.choice(
                config.p, size=config.target_count, replace=False
            )
        )
    )
    spec = InterventionSpec(
        targets=targets,
        model=config.model,
        delta=config.delta,
        sigma_new=config.sigma_new,
    )
    sem2 = apply_intervention(sem1, spec)
    return sem1, sem2, targets, sample_ss


def _covariance_pair(
    config: TrialConfig,
    sem1: LinearSem,
    sem2: LinearSem,
    sample_ss: np.random.SeedSequence,
) -> CovariancePair:
    if config.n == 0:
        if config.center:
            s1, _ = population_covariance(sem1)
            s2, _ = population_covariance(sem2)
        else:
            s1 = population_second_moment(sem1)
            s2 = population_second_moment(sem2)
        return CovariancePair(s1, s2)
    ss1, ss2 = sample_ss.spawn(2)
    x1 = sample(sem1, config.n, np.random.default_rng(ss1))
    x2 = sample(sem2, config.n, np.random.default_rng(ss2))
    return empirical_pair(x1, x2, center=config.center)


def run_trial(config: TrialConfig) -> TrialResult:
    """Draw an instance, estimate, and score it; deterministic per seed."""
    start = time.perf_counter()
    redraws = 0
    for attempt in range(config.max_redraws + 1):
        sem1, sem2, targets, sample_ss = _draw_instance(config, attempt)
        if not config.require_faithful:
            break
        if check_i_faithfulness(sem1, sem2, subsets="queried").holds:
            break
        redraws += 1
    else:
        raise RuntimeError(
            f"no faithful instance within {config.max_redraws} redraws"
        )

    pair = _covariance_pair(config, sem1, sem2, sample_ss)
    truth = ground_truth_answers(sem1, sem2, targets)
    estimate = estimate_targets(pair, config.estimator)
    metrics = evaluate(estimate, truth)
    return TrialResult(
        config=config,
        targets_true=targets,
        targets_est=tuple(sorted(estimate.targets)),
        parents_true=tuple(sorted(truth.parents)),
        parents_est=tuple(sorted(estimate.parents)),
        metrics=metrics,
        p_delta=estimate.decomposition.p_delta,
        max_class_size=estimate.decomposition.max_class_size,
        pde_call_count=estimate.pde_call_count,
        redraws=redraws,
        wall_time=time.perf_counter() - start,
        error=None,
    )


def _failed_trial(config: TrialConfig, exc: Exception, start: float) -> TrialResult:
    return TrialResult(
        config=config,
        targets_true=(),
        targets_est=(),
        parents_true=(),
        parents_est=(),
        metrics=None,
        p_delta=0,
        max_class_size=0,
        pde_call_count=0,
        redraws=0,
        wall_time=time.perf_counter() - start,
        error=f"{type(exc).__name__}: {exc}",
    )


@dataclass(frozen=True)
class CellSummary:
    """Aggregate over one grid cell's trials (failed trials excluded from
    the means; stds are sample standard deviations, 0 for a single trial)."""

    index: int
    config: TrialConfig
    n_trials: int
    n_failed: int
    redraws: int
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    f1_mean: float
    f1_std: float
    parent_precision_mean: float
    parent_precision_std: float
    parent_recall_mean: float
    parent_recall_std: float
    parent_f1_mean: float
    parent_f1_std: float
    exact_target_rate: float
    exact_parent_rate: float
    mean_p_delta: float
    mean_max_class_size: float
    mean_wall_time: float


@dataclass(frozen=True)
class SweepOutcome:
    """All per-trial results plus one summary row per grid cell."""

    cells: tuple[CellSummary, ...]
    trials: tuple[tuple[int, TrialResult], ...]


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _summarize(index: int, config: TrialConfig, results: list[TrialResult]) -> CellSummary:
    ok = [r for r in results if r.metrics is not None]
    cols = {
        name: [getattr(r.metrics, name) for r in ok]
        for name in (
            "precision",
            "recall",
            "f1",
            "parent_precision",
            "parent_recall",
            "parent_f1",
        )
    }
    stats = {}
    for name, values in cols.items():
        mean, std = _mean_std(values)
        stats[f"{name}_mean"] = mean
        stats[f"{name}_std"] = std
    exact_t, _ = _mean_std([float(r.metrics.exact_target_match) for r in ok])
    exact_p, _ = _mean_std([float(r.metrics.exact_parent_match) for r in ok])
    p_delta, _ = _mean_std([float(r.p_delta) for r in ok])
    max_cls, _ = _mean_std([float(r.max_class_size) for r in ok])
    wall, _ = _mean_std([r.wall_time for r in ok])
    return CellSummary(
        index=index,
        config=config,
        n_trials=len(results),
        n_failed=len(results) - len(ok),
        redraws=sum(r.redraws for r in results),
        exact_target_rate=exact_t,
        exact_parent_rate=exact_p,
        mean_p_delta=p_delta,
        mean_max_class_size=max_cls,
        mean_wall_time=wall,
        **stats,
    )


def sweep(
    grid: Sequence[TrialConfig],
    trials: int,
    seed: int | None = None,
    workers: int = 1,
) -> SweepOutcome:
    """Run ``trials`` trials per grid cell and aggregate each cell.

    Trial ``t`` of every cell shares the stream ``(seed, t)``, so cells
    differing only in estimator settings see identical instances (paired
    comparisons).  A trial that raises is recorded as a failed row.
    """
    if not grid:
        raise ValueError("empty grid")
    jobs: list[tuple[int, int]] = [
        (ci, t) for ci in range(len(grid)) for t in range(trials)
    ]

    def run(job: tuple[int, int]) -> tuple[int, int, TrialResult]:
        ci, t = job
        cfg = replace(grid[ci], trial=t)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        start = time.perf_counter()
        try:
            return ci, t, run_trial(cfg)
        except Exception as exc:
            return ci, t, _failed_trial(cfg, exc, start)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(run, jobs))
    else:
        raw = [run(job) for job in jobs]
    raw.sort(key=lambda item: (item[0], item[1]))

    cells = []
    for ci in range(len(grid)):
        cell_results = [r for c, _, r in raw if c == ci]
        cfg = cell_results[0].config if cell_results else grid[ci]
        cells.append(_summarize(ci, cfg, cell_results))
    return SweepOutcome(
        cells=tuple(cells),
        trials=tuple((ci, r) for ci, _, r in raw),
    )


@dataclass(frozen=True)
class ComplexityStats:
    """Decomposition sizes over random instances, for percentile curves."""

    p_delta: tuple[int, ...]
    max_class_size: tuple[int, ...]

    def percentile(self, q: float) -> tuple[float, float]:
        return (
            float(np.percentile(self.p_delta, q)),
            float(np.percentile(self.max_class_size, q)),
        )


def complexity_stats(
    p: int,
    c: float,
    target_count: int,
    trials: int,
    seed: int = 0,
) -> ComplexityStats:
    """Ground-truth decomposition sizes (no solver calls) over ``trials``
    random instances: the changed-set size and the largest class size."""
    p_deltas = []
    max_sizes = []
    for t in range(trials):
        root = np.random.SeedSequence([seed, t])
        graph_ss, target_ss = root.spawn(2)
        sem = generate_er_sem(p, c, seed=graph_ss)
        rng = np.random.default_rng(target_ss)
        targets = sorted(
            int(v) for v in rng.choice(p, size=target_count, replace=False)
        )
        truth = _ground_truth(sem.dag, targets)
        p_deltas.append(len(truth.s_delta))
        max_sizes.append(
            max((len(cls.members) for cls in truth.classes), default=0)
        )
    return ComplexityStats(
        p_delta=tuple(p_deltas), max_class_size=tuple(max_sizes)
    )
