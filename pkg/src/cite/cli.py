"""Command-line interface: simulation, estimation, benchmarking, ground
truth, and complexity statistics.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed input), 3 internal or solver error.  All diagnostics go to
standard error; artifacts are CSV and JSON files whose floats use
``repr`` (shortest lossless round-trip form).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .bench import TrialConfig, complexity_stats, sweep
from .estimator import CiteConfig, TargetEstimate, estimate_targets
from .exceptions import (
    CacheIncomplete,
    ClassTooLarge,
    CycleDetected,
    DimensionMismatch,
    EstimationStageError,
    IndexOutOfRange,
    NonFiniteInput,
    NonNumericCell,
    ParseError,
    RaggedRows,
    SingularGammaBlock,
    SingularSubmatrix,
    TargetOutOfRange,
    TooLarge,
)
from .oracle import _ground_truth
from .pde import (
    EMPIRICAL_CENTERED,
    EMPIRICAL_MOMENT,
    POPULATION,
    CovariancePair,
    empirical_pair,
)
from .sem import (
    InterventionSpec,
    LinearSem,
    apply_intervention,
    build_dag,
    population_covariance,
    population_second_moment,
    sample,
)

__all__ = [
    "main",
    "ingest_data",
    "load_graph",
    "save_graph",
    "result_payload",
]

_SOLVER_ERRORS = (
    EstimationStageError,
    SingularSubmatrix,
    SingularGammaBlock,
    ClassTooLarge,
    TooLarge,
    CacheIncomplete,
)
_DATA_ERRORS = (
    ParseError,
    DimensionMismatch,
    NonFiniteInput,
    CycleDetected,
    IndexOutOfRange,
    TargetOutOfRange,
    OSError,
    KeyError,
    ValueError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures raise instead of exiting 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _fmt(x: Any) -> str:
    """One CSV cell: floats via repr (lossless), bools lowercase, None empty."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _nodes_cell(nodes: Iterable[int]) -> str:
    return ";".join(str(v) for v in sorted(nodes))


def _edges_cell(edges: Iterable[tuple[int, int]]) -> str:
    return ";".join(f"{j}->{i}" for j, i in sorted(edges))


def ingest_data(path: str, delimiter: str = ",") -> tuple[np.ndarray, int]:
    """Read a numeric CSV matrix; a non-numeric first row is a header.

    Returns the data matrix and its row count.  Raises ``RaggedRows`` /
    ``NonNumericCell`` with 1-based row and column locations.
    """
    with open(path, newline="") as fh:
        raw = [row for row in csv.reader(fh, delimiter=delimiter)]
    rows = [(k, row) for k, row in enumerate(raw) if any(f.strip() for f in row)]
    if not rows:
        raise ParseError(f"{path}: no data rows")

    def numeric(row: list[str]) -> bool:
        try:
            for f in row:
                float(f)
        except ValueError:
            return False
        return True

    if not numeric(rows[0][1]):
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data rows")

    width = len(rows[0][1])
    out = np.empty((len(rows), width))
    for r, (line_no, row) in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(
                f"{path}: expected {width} fields, got {len(row)}",
                row=line_no + 1,
            )
        for c, f in enumerate(row):
            try:
                out[r, c] = float(f)
            except ValueError:
                raise NonNumericCell(
                    f"{path}: {f!r} is not a number",
                    row=line_no + 1,
                    col=c + 1,
                ) from None
    return out, len(rows)


def save_graph(sem: LinearSem, path: str) -> None:
    """Write a model as JSON: node count, weighted edges, variances, means."""
    payload: dict[str, Any] = {
        "p": sem.p,
        "edges": [
            [i, j, float(sem.B[i, j])] for i, j in sorted(sem.dag.edges)
        ],
        "sigma": [float(v) for v in sem.omega],
    }
    if np.any(sem.noise_mean):
        payload["mu"] = [float(v) for v in sem.noise_mean]
    _write_json(payload, path)


def load_graph(path: str) -> LinearSem:
    """Read a model written by :func:`save_graph` (validates acyclicity)."""
    with open(path) as fh:
        payload = json.load(fh)
    try:
        p = int(payload["p"])
        triples = payload["edges"]
        sigma_raw = payload["sigma"]
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from None
    edges = [(int(i), int(j)) for i, j, _ in triples]
    b = np.zeros((p, p))
    for i, j, w in triples:
        b[int(i), int(j)] = float(w)
    sigma = np.asarray([float(v) for v in sigma_raw], dtype=float)
    mu = payload.get("mu")
    mean = np.asarray([float(v) for v in mu], dtype=float) if mu is not None else None
    return LinearSem(build_dag(p, edges), b, sigma, noise_mean=mean)


def _write_json(payload: Any, path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_matrix_csv(matrix: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(v)) for v in row])


def result_payload(
    estimate: TargetEstimate,
    config: CiteConfig,
    with_timings: bool = False,
) -> dict[str, Any]:
    """The self-describing JSON body persisted after an estimation run.

    Timings are omitted by default and the worker count is never recorded
    (neither affects the estimate), so outputs are byte-identical across
    repeated runs and thread counts for one configuration.
    """
    d = estimate.decomposition
    payload: dict[str, Any] = {
        "version": __version__,
        "config": {
            "lambda1": config.lambda1,
            "lambda2": config.lambda2,
            "lambda3": config.lambda3,
            "epsilon": config.epsilon,
            "epsilon3": config.epsilon3,
            "tau_var": config.tau_var,
            "budget": config.budget,
            "backend": config.backend,
            "rho": config.rho,
            "max_iter": config.max_iter,
            "eps_abs": config.eps_abs,
            "eps_rel": config.eps_rel,
            "j0_via_pde": config.j0_via_pde,
        },
        "targets": sorted(estimate.targets),
        "parents": [[j, i] for j, i in sorted(estimate.parents)],
        "extra_orientations": [
            [k, i, bool(v)] for k, i, v in estimate.extra_orientations
        ],
        "within_class_orientations": [
            [k, i, bool(v)] for k, i, v in estimate.within_class_orientations
        ],
        "s_delta": sorted(d.s_delta),
        "j0": sorted(d.j0),
        "classes": [
            {"members": sorted(c.members), "sources": sorted(c.sources)}
            for c in d.classes
        ],
        "pde_call_count": estimate.pde_call_count,
        "timings": dict(estimate.per_stage_timings) if with_timings else None,
    }
    return payload


def _estimator_config(args: argparse.Namespace) -> CiteConfig:
    return CiteConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lambda3=args.lambda3,
        epsilon=args.epsilon,
        epsilon3=args.epsilon3,
        tau_var=args.tau_var,
        budget=args.budget,
        backend=args.backend,
        rho=args.rho,
        max_iter=args.max_iter,
        eps_abs=args.eps_abs,
        eps_rel=args.eps_rel,
        j0_via_pde=args.j0_via_pde,
        workers=args.workers,
    )


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda1", type=float, default=0.2, help="step 1/3 penalty")
    p.add_argument("--lambda2", type=float, default=0.2, help="step 2 penalty")
    p.add_argument("--lambda3", type=float, default=0.1, help="parent-test penalty")
    p.add_argument(
        "--epsilon",
        type=float,
        default=None,
        help="support threshold (default 0.1 empirical, 1e-8 population)",
    )
    p.add_argument(
        "--epsilon3",
        type=float,
        default=None,
        help="parent-test threshold (default lambda3 empirical, 1e-8 population)",
    )
    p.add_argument(
        "--tau-var",
        type=float,
        default=None,
        help="source-test relative variance tolerance (default 0.05 / 1e-8)",
    )
    p.add_argument("--budget", type=int, default=15, help="max class size")
    p.add_argument(
        "--backend", choices=["admm", "exact"], default="admm", help="solver"
    )
    p.add_argument("--rho", type=float, default=1.0, help="ADMM penalty")
    p.add_argument("--max-iter", type=int, default=2000, help="ADMM iteration cap")
    p.add_argument("--eps-abs", type=float, default=1e-6, help="ADMM abs tolerance")
    p.add_argument("--eps-rel", type=float, default=1e-4, help="ADMM rel tolerance")
    p.add_argument(
        "--j0-via-pde",
        action="store_true",
        help="detect source nodes with size-1 solver calls instead of diagonals",
    )
    p.add_argument("--workers", type=int, default=1, help="threads per class")


def _parser() -> _Parser:
    parser = _Parser(
        prog="cite",
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentDefaultsHelpFormatter

    sim = sub.add_parser(
        "simulate",
        formatter_class=fmt,
        help="draw a model (or load one), intervene, write data files",
    )
    sim.add_argument("--p", type=int, default=10, help="node count")
    sim.add_argument("--density", type=float, default=1.5, help="expected degree")
    sim.add_argument(
        "--targets", type=int, default=1, help="number of targets drawn at random"
    )
    sim.add_argument(
        "--target-list",
        type=str,
        default=None,
        help="comma-separated explicit targets (overrides --targets)",
    )
    sim.add_argument(
        "--graph", type=str, default=None, help="load this graph JSON instead of drawing"
    )
    sim.add_argument(
        "--model",
        choices=["shift", "variance", "randomized"],
        default="variance",
        help="intervention model",
    )
    sim.add_argument("--delta", type=float, default=1.0, help="shift amount")
    sim.add_argument(
        "--sigma-new",
        type=float,
        default=None,
        help="post-intervention variance (default 2.0 variance / 1.5 randomized)",
    )
    sim.add_argument(
        "--n",
        type=int,
        default=5000,
        help="samples per environment (0: write population matrices)",
    )
    sim.add_argument("--seed", type=int, default=0, help="master seed")
    sim.add_argument(
        "--center",
        action="store_true",
        help="write centered covariances when --n 0",
    )
    sim.add_argument("--out-prefix", type=str, required=True, help="output prefix")

    est = sub.add_parser(
        "estimate",
        formatter_class=fmt,
        help="estimate targets and parents from two data files",
    )
    est.add_argument("--obs", type=str, required=True, help="observational CSV")
    est.add_argument("--int", dest="interv", type=str, required=True,
                     help="interventional CSV")
    est.add_argument(
        "--cov",
        action="store_true",
        help="inputs are covariance/second-moment matrices, not samples",
    )
    est.add_argument(
        "--center",
        action="store_true",
        help="center empirical moments (default: uncentered)",
    )
    est.add_argument(
        "--n1", type=int, default=0,
        help="sample count behind --cov matrix 1 (0: population)",
    )
    est.add_argument(
        "--n2", type=int, default=0,
        help="sample count behind --cov matrix 2 (0: population)",
    )
    _add_estimator_flags(est)
    est.add_argument(
        "--timings", action="store_true", help="embed stage timings in the result"
    )
    est.add_argument("--out", type=str, default=None, help="result JSON (default stdout)")

    ben = sub.add_parser(
        "benchmark",
        formatter_class=fmt,
        help="run a trial grid from JSON, write a results CSV",
    )
    ben.add_argument("grid", type=str, help="grid JSON (list of cells or {cells: []})")
    ben.add_argument("--trials", type=int, default=10, help="trials per cell")
    ben.add_argument("--seed", type=int, default=None, help="override every cell seed")
    ben.add_argument("--workers", type=int, default=1, help="parallel trials")
    ben.add_argument(
        "--timings", action="store_true", help="include wall-time columns"
    )
    ben.add_argument("--out", type=str, required=True, help="output CSV")

    orc = sub.add_parser(
        "oracle",
        formatter_class=fmt,
        help="print the ground-truth decomposition of a graph + targets",
    )
    orc.add_argument("--graph", type=str, required=True, help="graph JSON")
    orc.add_argument(
        "--targets", type=str, required=True, help="comma-separated target nodes"
    )
    orc.add_argument("--out", type=str, default=None, help="JSON out (default stdout)")

    cpx = sub.add_parser(
        "complexity",
        formatter_class=fmt,
        help="decomposition-size percentiles over random instances",
    )
    cpx.add_argument("--p", type=int, default=100, help="node count")
    cpx.add_argument("--density", type=float, default=5.0, help="expected degree")
    cpx.add_argument("--targets", type=int, default=5, help="targets per instance")
    cpx.add_argument("--trials", type=int, default=1000, help="instances")
    cpx.add_argument("--seed", type=int, default=0, help="master seed")
    cpx.add_argument(
        "--percentiles",
        type=str,
        default="10,25,50,75,90",
        help="comma-separated percentiles",
    )
    cpx.add_argument("--out", type=str, default=None, help="CSV out (default stdout)")

    return parser


def _parse_targets(text: str) -> list[int]:
    try:
        return [int(f) for f in text.split(",") if f.strip() != ""]
    except ValueError:
        raise ParseError(f"bad target list {text!r}") from None


def _cmd_simulate(args: argparse.Namespace) -> int:
    root = np.random.SeedSequence([args.seed])
    graph_ss, target_ss, s1_ss, s2_ss = root.spawn(4)

    if args.graph is not None:
        sem1 = load_graph(args.graph)
    else:
        from .bench import generate_er_sem

        sem1 = generate_er_sem(args.p, args.density, seed=graph_ss)

    if args.target_list is not None:
        targets = sorted(set(_parse_targets(args.target_list)))
    else:
        rng = np.random.default_rng(target_ss)
        targets = sorted(
            int(v) for v in rng.choice(sem1.p, size=args.targets, replace=False)
        )
    spec = InterventionSpec(
        targets=targets,
        model=args.model,
        delta=args.delta,
        sigma_new=args.sigma_new,
    )
    sem2 = apply_intervention(sem1, spec)

    save_graph(sem1, f"{args.out_prefix}.graph.json")
    if args.n == 0:
        if args.center:
            m1, _ = population_covariance(sem1)
            m2, _ = population_covariance(sem2)
        else:
            m1 = population_second_moment(sem1)
            m2 = population_second_moment(sem2)
        _write_matrix_csv(m1, f"{args.out_prefix}.obs.csv")
        _write_matrix_csv(m2, f"{args.out_prefix}.int.csv")
    else:
        x1 = sample(sem1, args.n, np.random.default_rng(s1_ss))
        x2 = sample(sem2, args.n, np.random.default_rng(s2_ss))
        _write_matrix_csv(x1, f"{args.out_prefix}.obs.csv")
        _write_matrix_csv(x2, f"{args.out_prefix}.int.csv")
    sys.stdout.write(
        json.dumps({"targets": targets, "files": [
            f"{args.out_prefix}.graph.json",
            f"{args.out_prefix}.obs.csv",
            f"{args.out_prefix}.int.csv",
        ]}, sort_keys=True) + "\n"
    )
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    m1, n1 = ingest_data(args.obs)
    m2, n2 = ingest_data(args.interv)
    if args.cov:
        if m1.shape != m2.shape:
            raise DimensionMismatch(
                f"covariance shapes differ: {m1.shape} vs {m2.shape}"
            )
        if args.n1 > 0 or args.n2 > 0:
            kind = EMPIRICAL_CENTERED if args.center else EMPIRICAL_MOMENT
            pair = CovariancePair(m1, m2, n1=args.n1, n2=args.n2, kind=kind)
        else:
            pair = CovariancePair(m1, m2, kind=POPULATION)
    else:
        if m1.shape[1] != m2.shape[1]:
            raise DimensionMismatch(
                f"column counts differ: {m1.shape[1]} vs {m2.shape[1]}"
            )
        pair = empirical_pair(m1, m2, center=args.center)
    config = _estimator_config(args)
    estimate = estimate_targets(pair, config)
    _write_json(result_payload(estimate, config, args.timings), args.out)
    return 0


_TRIAL_COLUMNS = [
    "row_type", "cell", "trial", "p", "c", "target_count", "model", "n",
    "seed", "backend", "lambda1", "lambda2", "lambda3", "epsilon", "budget",
    "n_trials", "n_failed", "redraws",
    "precision", "precision_std", "recall", "recall_std", "f1", "f1_std",
    "parent_precision", "parent_precision_std",
    "parent_recall", "parent_recall_std", "parent_f1", "parent_f1_std",
    "exact_target_match", "exact_parent_match",
    "p_delta", "max_class_size", "pde_call_count",
    "targets_true", "targets_est", "parents_true", "parents_est", "error",
]


def _config_cells(cfg: TrialConfig) -> dict[str, Any]:
    return {
        "p": cfg.p,
        "c": cfg.c,
        "target_count": cfg.target_count,
        "model": cfg.model,
        "n": cfg.n,
        "seed": cfg.seed,
        "backend": cfg.estimator.backend,
        "lambda1": cfg.estimator.lambda1,
        "lambda2": cfg.estimator.lambda2,
        "lambda3": cfg.estimator.lambda3,
        "epsilon": cfg.estimator.epsilon,
        "budget": cfg.estimator.budget,
    }


def _load_grid(path: str) -> list[TrialConfig]:
    with open(path) as fh:
        payload = json.load(fh)
    cells = payload["cells"] if isinstance(payload, dict) else payload
    if not isinstance(cells, list) or not cells:
        raise ParseError(f"{path}: expected a nonempty list of cells")
    out = []
    for k, cell in enumerate(cells):
        if not isinstance(cell, dict):
            raise ParseError(f"{path}: cell {k} is not an object")
        cell = dict(cell)
        if "weight_range" in cell:
            cell["weight_range"] = tuple(cell["weight_range"])
        try:
            est = CiteConfig(**cell.pop("estimator", {}))
            out.append(TrialConfig(estimator=est, **cell))
        except TypeError as exc:
            raise ParseError(f"{path}: cell {k}: {exc}") from None
    return out


def _cmd_benchmark(args: argparse.Namespace) -> int:
    grid = _load_grid(args.grid)
    outcome = sweep(grid, args.trials, seed=args.seed, workers=args.workers)
    columns = list(_TRIAL_COLUMNS)
    if args.timings:
        columns.append("wall_time")

    rows: list[dict[str, Any]] = []
    for ci, r in outcome.trials:
        m = r.metrics
        row = {"row_type": "trial", "cell": ci, "trial": r.config.trial,
               "redraws": r.redraws, "error": r.error}
        row.update(_config_cells(r.config))
        if m is not None:
            row.update(
                precision=m.precision, recall=m.recall, f1=m.f1,
                parent_precision=m.parent_precision,
                parent_recall=m.parent_recall, parent_f1=m.parent_f1,
                exact_target_match=m.exact_target_match,
                exact_parent_match=m.exact_parent_match,
                p_delta=r.p_delta, max_class_size=r.max_class_size,
                pde_call_count=r.pde_call_count,
                targets_true=_nodes_cell(r.targets_true),
                targets_est=_nodes_cell(r.targets_est),
                parents_true=_edges_cell(r.parents_true),
                parents_est=_edges_cell(r.parents_est),
            )
        if args.timings:
            row["wall_time"] = r.wall_time
        rows.append(row)
    for cell in outcome.cells:
        row = {"row_type": "cell", "cell": cell.index,
               "n_trials": cell.n_trials, "n_failed": cell.n_failed,
               "redraws": cell.redraws,
               "precision": cell.precision_mean,
               "precision_std": cell.precision_std,
               "recall": cell.recall_mean, "recall_std": cell.recall_std,
               "f1": cell.f1_mean, "f1_std": cell.f1_std,
               "parent_precision": cell.parent_precision_mean,
               "parent_precision_std": cell.parent_precision_std,
               "parent_recall": cell.parent_recall_mean,
               "parent_recall_std": cell.parent_recall_std,
               "parent_f1": cell.parent_f1_mean,
               "parent_f1_std": cell.parent_f1_std,
               "exact_target_match": cell.exact_target_rate,
               "exact_parent_match": cell.exact_parent_rate,
               "p_delta": cell.mean_p_delta,
               "max_class_size": cell.mean_max_class_size}
        row.update(_config_cells(cell.config))
        if args.timings:
            row["wall_time"] = cell.mean_wall_time
        rows.append(row)

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    sem = load_graph(args.graph)
    targets = _parse_targets(args.targets)
    for t in targets:
        if not 0 <= t < sem.p:
            raise TargetOutOfRange(f"target {t} outside [0, {sem.p})")
    truth = _ground_truth(sem.dag, targets)
    payload = {
        "version": __version__,
        "targets": sorted(truth.targets),
        "s_delta": sorted(truth.s_delta),
        "j0": sorted(truth.j0),
        "source_sets": {
            str(k): sorted(v) for k, v in truth.source_sets.items()
        },
        "classes": [
            {"members": sorted(c.members), "sources": sorted(c.sources)}
            for c in truth.classes
        ],
        "m_sets": [sorted(m) for m in truth.m_sets],
        "parents": [[j, i] for j, i in sorted(truth.parents)],
    }
    _write_json(payload, args.out)
    return 0


def _cmd_complexity(args: argparse.Namespace) -> int:
    qs = []
    for f in args.percentiles.split(","):
        if f.strip() == "":
            continue
        try:
            qs.append(float(f))
        except ValueError:
            raise ParseError(f"bad percentile {f!r}") from None
    if not qs:
        raise ParseError("no percentiles given")
    stats = complexity_stats(
        args.p, args.density, args.targets, args.trials, seed=args.seed
    )
    lines = ["percentile,p_delta,max_class_size"]
    for q in qs:
        pd, mc = stats.percentile(q)
        lines.append(f"{_fmt(q)},{_fmt(pd)},{_fmt(mc)}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "benchmark": _cmd_benchmark,
    "oracle": _cmd_oracle,
    "complexity": _cmd_complexity,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _SOLVER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
