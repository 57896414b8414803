from __future__ import annotations

import numpy as np
import pytest

from cite.bench import generate_er_sem
from cite.estimator import CiteConfig
from cite.pde import POPULATION, CovariancePair
from cite.sem import (
    InterventionSpec,
    LinearSem,
    apply_intervention,
    build_dag,
    check_i_faithfulness,
    population_second_moment,
)

EXAMPLE_EDGES = [(0, 2), (2, 3), (1, 3), (1, 4), (3, 4)]
EXAMPLE_TARGETS = (2, 4)


def make_example_sem() -> LinearSem:
    """Five-node model with unit weights on 0->2, 2->3, 1->3, 1->4, 3->4."""
    dag = build_dag(5, EXAMPLE_EDGES)
    B = np.zeros((5, 5))
    for e in EXAMPLE_EDGES:
        B[e] = 1.0
    return LinearSem(dag, B, np.ones(5))


def population_pair(sem1: LinearSem, sem2: LinearSem) -> CovariancePair:
    return CovariancePair(
        population_second_moment(sem1),
        population_second_moment(sem2),
        kind=POPULATION,
    )


def er_pair(
    p: int, c: float, targets: tuple[int, ...], model: str, seed: int
) -> tuple[LinearSem, LinearSem, CovariancePair]:
    sem1 = generate_er_sem(p, c, seed=seed)
    sem2 = apply_intervention(sem1, InterventionSpec(targets, model))
    return sem1, sem2, population_pair(sem1, sem2)


def faithful_instances(count, p_range, models, seed0, target_max=3, subsets="queried"):
    """Yield ``count`` faithful (sem1, sem2, targets, pair) draws."""
    produced = 0
    trial = 0
    while produced < count:
        rng = np.random.default_rng(seed0 + trial)
        trial += 1
        p = int(rng.integers(p_range[0], p_range[1] + 1))
        k = int(rng.integers(1, min(target_max, p) + 1))
        targets = tuple(sorted(int(v) for v in rng.choice(p, size=k, replace=False)))
        model = models[trial % len(models)]
        sem1 = generate_er_sem(p, 1.5, seed=seed0 + 100_000 + trial)
        sem2 = apply_intervention(sem1, InterventionSpec(targets, model))
        if not check_i_faithfulness(sem1, sem2, subsets).holds:
            continue
        produced += 1
        yield sem1, sem2, targets, population_pair(sem1, sem2)


@pytest.fixture
def example_sem() -> LinearSem:
    return make_example_sem()


@pytest.fixture
def example_instance(example_sem):
    sem2 = apply_intervention(
        example_sem, InterventionSpec(EXAMPLE_TARGETS, "variance")
    )
    return example_sem, sem2, population_pair(example_sem, sem2)


@pytest.fixture
def exact_config() -> CiteConfig:
    return CiteConfig(backend="exact")
