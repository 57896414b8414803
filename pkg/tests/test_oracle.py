from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from cite.bench import generate_er_sem
from cite.exceptions import TooLarge
from cite.oracle import (
    AugmentedGraph,
    algorithm_subsets,
    brute_force_targets,
    d_separated,
    ground_truth_answers,
    interventional_cpdag,
    invariance_oracle,
)
from cite.sem import InterventionSpec, apply_intervention, build_dag
from tests.conftest import (
    EXAMPLE_EDGES,
    EXAMPLE_TARGETS,
    make_example_sem,
    population_pair,
)


def all_paths(dag, x, y):
    """Every simple undirected path between x and y, as node sequences."""
    adj = {v: set() for v in range(dag.p)}
    for i, j in dag.edges:
        adj[i].add(j)
        adj[j].add(i)
    out = []

    def walk(path):
        v = path[-1]
        if v == y:
            out.append(list(path))
            return
        for w in adj[v]:
            if w not in path:
                path.append(w)
                walk(path)
                path.pop()

    walk([x])
    return out


def path_blocked(dag, path, z):
    z = set(z)
    for a, b, c in zip(path, path[1:], path[2:]):
        collider = (a, b) in dag.edges and (c, b) in dag.edges
        if collider:
            if b not in z and not (dag.descendants_of(b) & z):
                return True
        elif b in z:
            return True
    return False


def d_separated_by_paths(dag, x, y, z):
    return all(path_blocked(dag, p, z) for p in all_paths(dag, x, y))


class TestDSeparation:
    def test_chain(self):
        dag = build_dag(3, [(0, 1), (1, 2)])
        assert d_separated(dag, 0, 2, {1})
        assert not d_separated(dag, 0, 2, set())

    def test_collider(self):
        dag = build_dag(3, [(0, 2), (1, 2)])
        assert d_separated(dag, 0, 1, set())
        assert not d_separated(dag, 0, 1, {2})

    def test_collider_descendant_opens(self):
        dag = build_dag(4, [(0, 2), (1, 2), (2, 3)])
        assert not d_separated(dag, 0, 1, {3})

    def test_example_graph(self):
        dag = build_dag(5, EXAMPLE_EDGES)
        assert d_separated(dag, 0, 4, {2, 3})
        assert not d_separated(dag, 0, 4, {3})  # opens the collider at 3

    def test_rejects_degenerate_queries(self):
        dag = build_dag(2, [(0, 1)])
        with pytest.raises(ValueError):
            d_separated(dag, 0, 0, set())
        with pytest.raises(ValueError):
            d_separated(dag, 0, 1, {1})

    def test_matches_path_enumeration(self):
        for seed in range(15):
            dag = generate_er_sem(6, 1.8, seed=seed).dag
            for x, y in combinations(range(6), 2):
                rest = [v for v in range(6) if v not in (x, y)]
                for r in range(len(rest) + 1):
                    for z in combinations(rest, r):
                        assert d_separated(dag, x, y, z) == d_separated_by_paths(
                            dag, x, y, z
                        )


class TestAugmentedGraph:
    def test_zeta_edges(self):
        dag = build_dag(3, [(0, 1)])
        aug = AugmentedGraph.from_targets(dag, (1, 2))
        assert aug.zeta == 3
        assert aug.targets == {1, 2}
        assert (3, 1) in aug.graph.edges and (3, 2) in aug.graph.edges
        assert aug.graph.p == 4

    def test_rejects_bad_targets(self):
        dag = build_dag(2, [(0, 1)])
        with pytest.raises(ValueError):
            AugmentedGraph.from_targets(dag, (2,))


class TestInvarianceOracle:
    def test_example_cases(self):
        aug = AugmentedGraph.from_targets(build_dag(5, EXAMPLE_EDGES), EXAMPLE_TARGETS)
        assert invariance_oracle(aug, 3, {0, 1, 2, 3})
        assert not invariance_oracle(aug, 3, {1, 3})
        assert not invariance_oracle(aug, 2, {0, 1, 2, 3, 4})
        assert invariance_oracle(aug, 0, {0})

    def test_requires_membership(self):
        aug = AugmentedGraph.from_targets(build_dag(2, [(0, 1)]), (1,))
        with pytest.raises(ValueError):
            invariance_oracle(aug, 0, {1})

    def test_matches_exact_diagonal(self, example_instance):
        sem1, sem2, pair = example_instance
        aug = AugmentedGraph.from_targets(sem1.dag, EXAMPLE_TARGETS)
        p = sem1.p
        for mask in range(1, 1 << p):
            s = frozenset(v for v in range(p) if mask >> v & 1)
            idx = np.asarray(sorted(s))
            delta = np.linalg.inv(pair.sigma1[np.ix_(idx, idx)]) - np.linalg.inv(
                pair.sigma2[np.ix_(idx, idx)]
            )
            for lj, j in enumerate(sorted(s)):
                assert invariance_oracle(aug, j, s) == (abs(delta[lj, lj]) <= 1e-8)


class TestGroundTruth:
    def test_example_values(self, example_instance):
        sem1, sem2, _ = example_instance
        gt = ground_truth_answers(sem1, sem2, EXAMPLE_TARGETS)
        assert gt.targets == frozenset({2, 4})
        assert gt.s_delta == frozenset({0, 1, 2, 3, 4})
        assert gt.j0 == frozenset({0, 1})
        assert gt.source_sets == {
            2: frozenset({0}),
            3: frozenset({0, 1}),
            4: frozenset({0, 1}),
        }
        assert [tuple(sorted(c.members)) for c in gt.classes] == [(2,), (3, 4)]
        assert [tuple(sorted(c.sources)) for c in gt.classes] == [(0,), (0, 1)]
        assert gt.m_sets == (frozenset({0}), frozenset({0, 1, 2}))
        assert gt.parents == frozenset({(0, 2), (1, 4)})

    def test_rejects_structure_mismatch(self):
        sem1 = make_example_sem()
        other = generate_er_sem(5, 1.5, seed=1)
        with pytest.raises(ValueError):
            ground_truth_answers(sem1, other, (2,))


class TestBruteForce:
    def test_example_targets(self, example_instance):
        *_, pair = example_instance
        assert set(brute_force_targets(pair)) == {2, 4}

    def test_chain_single_target(self):
        sem1 = generate_er_sem(4, 1.5, seed=3)
        sem2 = apply_intervention(sem1, InterventionSpec((2,), "variance"))
        assert set(brute_force_targets(population_pair(sem1, sem2))) == {2}

    def test_size_guard(self):
        sem1 = generate_er_sem(21, 1.0, seed=0)
        sem2 = apply_intervention(sem1, InterventionSpec(tuple(range(21)), "variance"))
        with pytest.raises(TooLarge):
            brute_force_targets(population_pair(sem1, sem2))


class TestInterventionalCpdag:
    def test_chain_fully_oriented(self):
        got = interventional_cpdag(build_dag(3, [(0, 1), (1, 2)]), (1,))
        assert got.directed == {(0, 1), (1, 2)}
        assert got.undirected == frozenset()
        assert got.p == 3

    def test_untouched_component_stays_ambiguous(self):
        got = interventional_cpdag(build_dag(4, [(0, 1), (2, 3)]), (0,))
        assert got.directed == {(0, 1)}
        assert got.undirected == {(2, 3)}

    def test_example_graph(self):
        got = interventional_cpdag(build_dag(5, EXAMPLE_EDGES), EXAMPLE_TARGETS)
        assert got.directed == {(0, 2), (2, 3), (1, 3), (1, 4), (3, 4)}
        assert got.undirected == frozenset()


class TestAlgorithmSubsets:
    def test_example_enumeration(self):
        dag = build_dag(5, EXAMPLE_EDGES)
        subsets = algorithm_subsets(dag, EXAMPLE_TARGETS)
        assert subsets[0] == frozenset(range(5))
        # J0 x (S_delta \ J0) pairs, then M u A for every subset A per class
        assert frozenset({0, 2}) in subsets
        assert frozenset({1, 4}) in subsets
        assert frozenset({0}) in subsets  # class 1, A = {}
        assert frozenset({0, 1, 2, 3, 4}) in subsets
        assert len(subsets) == 1 + 6 + 2 + 4
