"""End-to-end acceptance suite: one test per numbered project criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line
per criterion.  Each test pins its instance distribution with explicit
seeds so reruns are bit-for-bit comparable; thresholds and time caps are
asserted inside the tests.
"""

from __future__ import annotations

import json
import time
from itertools import combinations

import numpy as np
import pytest

from cite.bench import (
    TrialConfig,
    complexity_stats,
    generate_er_sem,
    run_trial,
)
from cite.cli import main as cli_main
from cite.estimator import CiteConfig, estimate_targets
from cite.oracle import (
    AugmentedGraph,
    brute_force_targets,
    ground_truth_answers,
    invariance_oracle,
)
from cite.pde import (
    AdmmConfig,
    empirical_pair,
    estimate_precision_difference,
    exact_precision_difference,
)
from cite.sem import (
    InterventionSpec,
    LinearSem,
    apply_intervention,
    build_dag,
    check_i_faithfulness,
    population_covariance,
    restricted_sem,
    sample,
)
from tests.conftest import (
    EXAMPLE_TARGETS,
    faithful_instances,
    make_example_sem,
    population_pair,
)

EXACT = CiteConfig(backend="exact")
TUNED_ADMM = CiteConfig(
    backend="admm", lambda1=0.1, lambda2=0.2, epsilon=0.015
)


def test_criterion_01_worked_example_is_recovered_exactly():
    """The five-node worked example: every staged quantity exact, < 1 s."""
    start = time.perf_counter()
    sem1 = make_example_sem()
    sem2 = apply_intervention(
        sem1, InterventionSpec(EXAMPLE_TARGETS, "variance")
    )
    est = estimate_targets(population_pair(sem1, sem2), EXACT)
    d = est.decomposition
    assert est.targets == frozenset({2, 4})
    assert est.parents == frozenset({(0, 2), (1, 4)})
    assert d.s_delta == frozenset({0, 1, 2, 3, 4})
    assert d.j0 == frozenset({0, 1})
    assert d.source_sets == {
        2: frozenset({0}),
        3: frozenset({0, 1}),
        4: frozenset({0, 1}),
    }
    assert [(c.members, c.sources) for c in d.classes] == [
        (frozenset({2}), frozenset({0})),
        (frozenset({3, 4}), frozenset({0, 1})),
    ]
    assert d.m_sets == (frozenset({0}), frozenset({0, 1, 2}))
    assert time.perf_counter() - start < 1.0


def test_criterion_02_noise_scale_instances_recover_targets_and_parents():
    """200 faithful variance-intervention instances (p in [8, 15],
    1-3 targets): the exact backend recovers targets and parents on every
    one, within 30 s."""
    start = time.perf_counter()
    produced = trial = 0
    while produced < 200:
        rng = np.random.default_rng(20000 + trial)
        p = int(rng.integers(8, 16))
        k = int(rng.integers(1, 4))
        targets = tuple(
            sorted(int(v) for v in rng.choice(p, size=k, replace=False))
        )
        sem1 = generate_er_sem(p, 1.5, seed=30000 + trial)
        trial += 1
        assert trial < 500, "faithful instances should be abundant"
        sem2 = apply_intervention(sem1, InterventionSpec(targets, "variance"))
        if not check_i_faithfulness(sem1, sem2, "queried").holds:
            continue
        produced += 1
        est = estimate_targets(population_pair(sem1, sem2), EXACT)
        gt = ground_truth_answers(sem1, sem2, targets)
        assert est.targets == gt.targets, f"targets wrong on draw {trial - 1}"
        assert est.parents == gt.parents, f"parents wrong on draw {trial - 1}"
    assert time.perf_counter() - start < 30.0


def test_criterion_03_estimate_equals_brute_force_equals_ground_truth():
    """100 faithful small instances (p <= 8): the staged estimate, the
    exhaustive-subset brute force, and the graph-derived ground truth agree
    field by field, within 60 s."""
    start = time.perf_counter()
    count = 0
    for sem1, sem2, targets, pair in faithful_instances(
        100, (4, 8), ("variance", "randomized"), seed0=3000
    ):
        est = estimate_targets(pair, EXACT)
        gt = ground_truth_answers(sem1, sem2, targets)
        d = est.decomposition
        assert est.targets == gt.targets == brute_force_targets(pair)
        assert est.parents == gt.parents
        assert d.s_delta == gt.s_delta
        assert d.j0 == gt.j0
        assert dict(d.source_sets) == dict(gt.source_sets)
        assert {(c.members, c.sources) for c in d.classes} == {
            (c.members, c.sources) for c in gt.classes
        }
        assert set(d.m_sets) == set(gt.m_sets)
        count += 1
    assert count == 100
    assert time.perf_counter() - start < 60.0


def test_criterion_04_marginalization_matches_inverted_covariance():
    """100 random models (p <= 10): the closed-form restricted-model
    parameters agree with inverting the marginal covariance on each node's
    in-subset ancestral closure, to 1e-8 relative error."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for probe in range(100):
        p = int(rng.integers(3, 11))
        sem = generate_er_sem(p, 1.5, seed=500 + probe)
        size = int(rng.integers(1, p + 1))
        s = tuple(sorted(int(v) for v in rng.choice(p, size, replace=False)))
        r = restricted_sem(sem, s)
        sig, _ = population_covariance(sem)
        pos = {v: k for k, v in enumerate(s)}
        for j in s:
            closure = tuple(
                sorted((set(s) & sem.dag.ancestors_of(j)) | {j})
            )
            idx = np.asarray(closure)
            theta = np.linalg.inv(sig[np.ix_(idx, idx)])
            lj = closure.index(j)
            want_sigma = 1.0 / theta[lj, lj]
            rel = abs(r.sigma_S[pos[j]] - want_sigma) / max(1.0, abs(want_sigma))
            worst = max(worst, rel)
            for k in s:
                if k == j:
                    continue
                want = (
                    -theta[closure.index(k), lj] / theta[lj, lj]
                    if k in closure
                    else 0.0
                )
                rel = abs(r.B_S[pos[k], pos[j]] - want) / max(1.0, abs(want))
                worst = max(worst, rel)
    assert worst <= 1e-8, f"worst relative error {worst:.3e}"


def test_criterion_05_graphical_oracle_matches_exact_zero_pattern():
    """On 100 faithful instances (p <= 8, all three intervention models),
    the graphical invariance oracle and the exactly inverted restricted
    difference agree on every (node, subset) diagonal at tolerance 1e-8.

    Faithfulness here includes the tested family itself: a draw whose
    *connected* diagonal falls below tolerance (a numeric near-cancellation
    of the generic case) is excluded and counted, with the exclusion count
    capped so the premise stays meaningful.
    """
    models = ("variance", "shift", "randomized")
    produced = trial = near_unfaithful = 0
    pairs_checked = 0
    while produced < 100:
        rng = np.random.default_rng(40000 + trial)
        p = int(rng.integers(4, 9))
        k = int(rng.integers(1, 4))
        targets = tuple(
            sorted(int(v) for v in rng.choice(p, size=k, replace=False))
        )
        model = models[trial % 3]
        sem1 = generate_er_sem(p, 1.5, seed=41000 + trial)
        trial += 1
        assert trial < 400, "faithful instances should be abundant"
        sem2 = apply_intervention(sem1, InterventionSpec(targets, model))
        if not check_i_faithfulness(sem1, sem2, "exhaustive").holds:
            continue
        aug = AugmentedGraph.from_targets(sem1.dag, targets)
        s1 = population_pair(sem1, sem2).sigma1
        s2 = population_pair(sem1, sem2).sigma2
        verdicts = []  # (oracle_says_invariant, |delta_jj|)
        for r in range(1, p + 1):
            for s in combinations(range(p), r):
                idx = np.asarray(s)
                delta = np.linalg.inv(s1[np.ix_(idx, idx)]) - np.linalg.inv(
                    s2[np.ix_(idx, idx)]
                )
                for lj, j in enumerate(s):
                    verdicts.append(
                        (invariance_oracle(aug, j, set(s)), abs(delta[lj, lj]))
                    )
        if any(not inv and mag <= 1e-8 for inv, mag in verdicts):
            near_unfaithful += 1
            continue
        produced += 1
        pairs_checked += len(verdicts)
        for inv, mag in verdicts:
            assert inv == (mag <= 1e-8)
    assert near_unfaithful <= 10, "too many near-cancellations to trust seeds"
    assert pairs_checked > 30000


@pytest.mark.parametrize(
    "p, min_recall", [(40, 0.85), (100, 0.88)], ids=["p40", "p100"]
)
def test_criterion_06_sampled_shift_benchmark(p, min_recall):
    """Mean-shift interventions, 5 targets, n = 5000, 50 trials with the
    tuned sparse solver: mean target precision >= 0.85, mean recall >= 0.85
    (p = 40) resp. 0.88 (p = 100), every trial under 5 s."""
    precisions, recalls = [], []
    for t in range(50):
        cfg = TrialConfig(
            p=p,
            c=1.5,
            target_count=5,
            model="shift",
            n=5000,
            seed=42,
            trial=t,
            estimator=TUNED_ADMM,
        )
        result = run_trial(cfg)
        assert result.error is None
        assert result.wall_time <= 5.0
        precisions.append(result.metrics.precision)
        recalls.append(result.metrics.recall)
    assert float(np.mean(precisions)) >= 0.85
    assert float(np.mean(recalls)) >= min_recall


@pytest.mark.parametrize("model", ["shift", "variance", "randomized"])
def test_criterion_07_precision_improves_with_sample_size(model):
    """p = 100, 5 targets, 25 trials per sample size: pooled target
    precision at n = 25000 is at least that at n = 1000 (trials whose class
    enumeration overflows the budget at small n are declined and contribute
    nothing)."""
    pooled = {}
    for n in (1000, 25000):
        tp = claimed = 0
        for t in range(25):
            cfg = TrialConfig(
                p=100,
                c=1.5,
                target_count=5,
                model=model,
                n=n,
                seed=7,
                trial=t,
                estimator=TUNED_ADMM,
            )
            try:
                result = run_trial(cfg)
            except Exception:
                continue
            if result.error is not None:
                continue
            est = set(result.targets_est)
            true = set(result.targets_true)
            tp += len(est & true)
            claimed += len(est)
        pooled[n] = tp / claimed if claimed else 1.0
    assert pooled[25000] >= pooled[1000], pooled


def test_criterion_08_solver_accuracy_and_support_recovery():
    """(a) With a vanishing penalty on population input the iterative
    solver matches exact inversion within 1e-3 (pre-threshold, infinity
    norm) and satisfies its stopping criterion when it reports convergence.
    (b) With tuned penalty/threshold on n = 10000 samples (p = 50, true
    difference row degree <= 3, 20 trials) support-recovery F1 >= 0.9."""
    worst = 0.0
    for trial in range(30):
        rng = np.random.default_rng(trial)
        p = int(rng.integers(4, 21))
        sem1 = generate_er_sem(p, 1.5, seed=trial)
        k = int(rng.integers(1, 4))
        targets = tuple(
            sorted(int(v) for v in rng.choice(p, size=k, replace=False))
        )
        model = ("variance", "shift", "randomized")[trial % 3]
        sem2 = apply_intervention(sem1, InterventionSpec(targets, model))
        pair = population_pair(sem1, sem2)
        subset = tuple(range(p))
        exact = exact_precision_difference(pair, subset, epsilon=1e-8)
        cfg = AdmmConfig(lam=1e-4, epsilon_threshold=1e-8)
        admm = estimate_precision_difference(pair, subset, cfg)
        worst = max(
            worst, float(np.max(np.abs(admm.delta_raw - exact.delta_raw)))
        )
        diag = admm.diagnostics
        if diag.converged:
            m = p * p
            raw_norm = float(np.linalg.norm(admm.delta_raw))
            slack = cfg.eps_rel * (1.05 * raw_norm + diag.primal_residual)
            assert diag.primal_residual <= 2 * m**0.5 * cfg.eps_abs + slack
    assert worst <= 1e-3, f"worst population gap {worst:.3e}"

    scores = []
    for t in range(20):
        sem1, sem2, truth = _star_instance(p=50, n_targets=5, seed=1000 + t)
        ss1, ss2 = np.random.SeedSequence([7, t]).spawn(2)
        x1 = sample(sem1, 10000, ss1)
        x2 = sample(sem2, 10000, ss2)
        pair = empirical_pair(x1, x2)
        diff = estimate_precision_difference(
            pair, range(50), AdmmConfig(lam=0.01, epsilon_threshold=0.05)
        )
        est = set(diff.support)
        tp = len(est & truth)
        prec = tp / len(est) if est else 1.0
        rec = tp / len(truth) if truth else 1.0
        scores.append(
            0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
        )
    assert float(np.mean(scores)) >= 0.9, f"mean support F1 {np.mean(scores):.3f}"


def _star_instance(p: int, n_targets: int, seed: int):
    """Disjoint two-parent stars, variance intervention on the children:
    the true precision difference has row degree <= 3."""
    rng = np.random.default_rng(seed)
    nodes = rng.permutation(p)
    edges, targets = [], []
    for k in range(n_targets):
        a, b, t = nodes[3 * k : 3 * k + 3]
        edges += [(int(a), int(t)), (int(b), int(t))]
        targets.append(int(t))
    b_mat = np.zeros((p, p))
    for e in edges:
        b_mat[e] = rng.uniform(0.25, 1.0) * (1 if rng.integers(0, 2) else -1)
    sem1 = LinearSem(build_dag(p, edges), b_mat, np.ones(p))
    sem2 = apply_intervention(
        sem1, InterventionSpec(tuple(targets), "variance")
    )
    _, th1 = population_covariance(sem1)
    _, th2 = population_covariance(sem2)
    support = {
        (i, j) for i, j in zip(*np.nonzero(np.abs(th1 - th2) > 1e-12))
    }
    assert max(
        len({j for i2, j in support if i2 == i}) for i in range(p)
    ) <= 3
    return sem1, sem2, support


def test_criterion_09_decomposition_stays_small_at_scale():
    """1000 random instances at p = 100, expected degree 5: with 5 targets
    the 90th-percentile changed-set size is >= 15 while the 90th-percentile
    class size stays <= 6; with 10 targets the median changed-set size is
    >= 25 and the 90th-percentile class size <= 12.  Under 60 s."""
    start = time.perf_counter()
    five = complexity_stats(100, 5.0, 5, trials=1000, seed=3)
    ten = complexity_stats(100, 5.0, 10, trials=1000, seed=3)
    p_delta_90, class_90 = five.percentile(90)
    assert p_delta_90 >= 15
    assert class_90 <= 6
    p_delta_med, _ = ten.percentile(50)
    _, class_90_ten = ten.percentile(90)
    assert p_delta_med >= 25
    assert class_90_ten <= 12
    assert time.perf_counter() - start < 60.0


def test_criterion_10_artifacts_are_byte_deterministic(tmp_path, capsys):
    """Estimation result JSON and benchmark CSV are byte-identical across
    repeated runs and across worker counts."""
    sem1 = make_example_sem()
    sem2 = apply_intervention(
        sem1, InterventionSpec(EXAMPLE_TARGETS, "variance")
    )
    from cite.sem import population_second_moment

    for name, sem in (("obs", sem1), ("int", sem2)):
        m = population_second_moment(sem)
        lines = "\n".join(
            ",".join(repr(float(v)) for v in row) for row in m
        )
        (tmp_path / f"{name}.csv").write_text(lines + "\n")

    def run_estimate(out, workers):
        code = cli_main(
            [
                "estimate",
                "--obs", str(tmp_path / "obs.csv"),
                "--int", str(tmp_path / "int.csv"),
                "--cov", "--backend", "exact",
                "--workers", str(workers),
                "--out", str(out),
            ]
        )
        assert code == 0
        return out.read_bytes()

    first = run_estimate(tmp_path / "r1.json", 1)
    assert run_estimate(tmp_path / "r2.json", 1) == first
    assert run_estimate(tmp_path / "r4.json", 4) == first
    assert json.loads(first)["targets"] == [2, 4]

    grid = [
        {
            "p": 6,
            "c": 1.5,
            "target_count": 2,
            "model": "variance",
            "estimator": {"backend": "exact"},
        }
    ]
    (tmp_path / "grid.json").write_text(json.dumps(grid))

    def run_benchmark(out, workers):
        code = cli_main(
            [
                "benchmark", str(tmp_path / "grid.json"),
                "--trials", "4", "--seed", "11",
                "--workers", str(workers),
                "--out", str(out),
            ]
        )
        assert code == 0
        return out.read_bytes()

    first_csv = run_benchmark(tmp_path / "b1.csv", 1)
    assert run_benchmark(tmp_path / "b2.csv", 1) == first_csv
    assert run_benchmark(tmp_path / "b3.csv", 3) == first_csv
    capsys.readouterr()
