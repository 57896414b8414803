"""Graph-theoretic ground truth for testing the estimator.

Everything here answers questions from the true DAG (d-separation, the
staged decomposition's intermediate sets, an exhaustive target identifier,
the interventional CPDAG) without ever touching a solver, so estimator
output can be checked against an independent derivation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Mapping

from .cpdag import Cpdag, cpdag_from_dag, meek_closure
from .estimator import ClassInfo, _m_sets, form_equivalence_classes
from .exceptions import TooLarge
from .pde import CovariancePair, exact_precision_difference
from .sem import Dag, LinearSem, build_dag

__all__ = [
    "AugmentedGraph",
    "GroundTruth",
    "d_separated",
    "invariance_oracle",
    "ground_truth_answers",
    "brute_force_targets",
    "interventional_cpdag",
    "algorithm_subsets",
]


@dataclass(frozen=True)
class AugmentedGraph:
    """A DAG plus a virtual intervention vertex pointing at each target.

    The virtual vertex gets label ``p`` (one past the real nodes) and has
    no incoming edges.
    """

    base: Dag
    f_edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        zeta = self.base.p
        for s, t in self.f_edges:
            if s != zeta:
                raise ValueError(f"augmenting edge {(s, t)} must leave vertex {zeta}")
            if not 0 <= t < zeta:
                raise ValueError(f"augmenting edge target {t} out of range")

    @classmethod
    def from_targets(cls, dag: Dag, targets: Iterable[int]) -> "AugmentedGraph":
        zeta = dag.p
        return cls(base=dag, f_edges=tuple((zeta, int(i)) for i in sorted(set(targets))))

    @property
    def zeta(self) -> int:
        return self.base.p

    @property
    def targets(self) -> frozenset[int]:
        return frozenset(t for _, t in self.f_edges)

    @cached_property
    def graph(self) -> Dag:
        edges = [(i, j) for i in range(self.base.p) for j in self.base.children_of(i)]
        return build_dag(self.base.p + 1, edges + list(self.f_edges))


def d_separated(dag: Dag, x: int, y: int, z: Iterable[int]) -> bool:
    """Whether every path between ``x`` and ``y`` is blocked given ``z``.

    Linear-time reachability over (node, approach-direction) states: a
    node reached from a parent continues downward unless conditioned on,
    and reopens upward only when it is a conditioning-set ancestor (the
    collider rule); a node reached from a child continues both ways unless
    conditioned on.
    """
    z = frozenset(int(v) for v in z)
    if x == y:
        raise ValueError("x and y must differ")
    if x in z or y in z:
        raise ValueError("x and y must not be conditioned on")
    an_z = set(z)
    for v in z:
        an_z |= dag.ancestors_of(v)

    up, down = 0, 1
    queue = deque([(x, up)])
    visited: set[tuple[int, int]] = set()
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v == y:
            return False
        if direction == up:
            if v not in z:
                for u in dag.parents_of(v):
                    queue.append((u, up))
                for u in dag.children_of(v):
                    queue.append((u, down))
        else:
            if v not in z:
                for u in dag.children_of(v):
                    queue.append((u, down))
            if v in an_z:
                for u in dag.parents_of(v):
                    queue.append((u, up))
    return True


def invariance_oracle(aug: AugmentedGraph, j: int, s: Iterable[int]) -> bool:
    """Predict whether restricting to ``s`` leaves node ``j``'s precision
    diagonal unchanged: true iff the virtual intervention vertex and ``j``
    are d-separated given ``s`` minus ``j`` in the augmented graph."""
    s = frozenset(int(v) for v in s)
    if j not in s:
        raise ValueError(f"node {j} must belong to the restriction set")
    return d_separated(aug.graph, aug.zeta, j, s - {j})


@dataclass(frozen=True)
class GroundTruth:
    """Every staged-estimator intermediate, derived from the true graph."""

    targets: frozenset[int]
    s_delta: frozenset[int]
    j0: frozenset[int]
    source_sets: Mapping[int, frozenset[int]]
    classes: tuple[ClassInfo, ...]
    m_sets: tuple[frozenset[int], ...]
    parents: frozenset[tuple[int, int]]


def ground_truth_answers(
    sem1: LinearSem, sem2: LinearSem, targets: Iterable[int]
) -> GroundTruth:
    """Graph-theoretic values of every estimator intermediate.

    ``s_delta`` is the targets plus their parents; ``j0`` its non-target
    members with no target ancestor; source sets use self-inclusive common
    ancestry; classes share the estimator's grouping and ordering; and
    ``parents`` contains the non-target true parents of each target that
    the staged method can reach, i.e. those inside the target's class
    conditioning core ``M``.
    """
    if sem1.dag.p != sem2.dag.p or set(sem1.dag.edges) != set(sem2.dag.edges):
        raise ValueError("models must share one graph")
    return _ground_truth(sem1.dag, targets)


def _ground_truth(dag: Dag, targets: Iterable[int]) -> GroundTruth:
    targets = frozenset(int(i) for i in targets)
    for i in targets:
        if not 0 <= i < dag.p:
            raise ValueError(f"target {i} out of range")
    s_delta = set(targets)
    for i in targets:
        s_delta |= dag.parents_of(i)
    j0 = frozenset(
        j
        for j in s_delta - targets
        if not (dag.ancestors_of(j) & targets)
    )
    closures = {
        k: dag.ancestors_of(k) | {k} for k in s_delta
    }
    source_sets = {
        k: frozenset(j for j in j0 if closures[j] & closures[k])
        for k in sorted(s_delta - j0)
    }
    classes = form_equivalence_classes(source_sets)
    m_sets, _ = _m_sets(classes)

    class_of = {k: l for l, cls in enumerate(classes) for k in cls.members}
    parents = frozenset(
        (j, i)
        for i in targets
        for j in dag.parents_of(i)
        if j not in targets and j in m_sets[class_of[i]]
    )
    return GroundTruth(
        targets=targets,
        s_delta=frozenset(s_delta),
        j0=j0,
        source_sets=source_sets,
        classes=classes,
        m_sets=m_sets,
        parents=parents,
    )


def brute_force_targets(
    pair: CovariancePair, epsilon: float | None = None
) -> frozenset[int]:
    """Identify targets by exhausting every subset of the changed set.

    A changed node is ruled out as a target when some subset's exact
    precision difference zeroes its diagonal; what survives is returned.
    Exponential in the changed-set size (capped at 20).
    """
    if epsilon is None:
        epsilon = 1e-8 if pair.is_population else 0.1
    full = exact_precision_difference(pair, range(pair.p), epsilon)
    s_delta = sorted(
        k for k in range(pair.p) if full.delta[k, k] != 0.0
    )
    if len(s_delta) > 20:
        raise TooLarge(
            f"changed set of size {len(s_delta)} exceeds the exhaustive cap 20"
        )
    ruled_out: set[int] = set()
    for r in range(1, len(s_delta) + 1):
        for s in combinations(s_delta, r):
            diff = exact_precision_difference(pair, s, epsilon)
            for k in s:
                if k not in ruled_out and diff.entry(k, k) == 0.0:
                    ruled_out.add(k)
    return frozenset(s_delta) - ruled_out


def interventional_cpdag(dag: Dag, targets: Iterable[int]) -> Cpdag:
    """The CPDAG refined by knowing the intervention targets.

    Built on the augmented graph: v-structures orient as usual, every
    virtual-vertex edge is oriented outward as background knowledge, Meek
    rules close the orientations, and the virtual vertex is dropped.
    """
    aug = AugmentedGraph.from_targets(dag, targets)
    cp = cpdag_from_dag(aug.graph)
    zeta = aug.zeta
    directed = set(cp.directed)
    undirected = set(cp.undirected)
    for a, b in sorted(undirected):
        if b == zeta:  # normalized pairs put the max label second
            undirected.discard((a, b))
            directed.add((zeta, a))
    d, u = meek_closure(dag.p + 1, directed, undirected)
    return Cpdag(
        p=dag.p,
        directed=frozenset(e for e in d if zeta not in e),
        undirected=frozenset(e for e in u if zeta not in e),
    )


def algorithm_subsets(dag: Dag, targets: Iterable[int]) -> list[frozenset[int]]:
    """The node subsets the staged estimator would restrict to, derived
    from ground truth: all nodes, each (source, non-source) pair, and each
    class core joined with every subset of the class."""
    truth = _ground_truth(dag, targets)
    out: list[frozenset[int]] = [frozenset(range(dag.p))]
    for k in sorted(truth.s_delta - truth.j0):
        for j in sorted(truth.j0):
            out.append(frozenset({j, k}))
    for l, cls in enumerate(truth.classes):
        members = sorted(cls.members)
        for r in range(len(members) + 1):
            for a in combinations(members, r):
                out.append(truth.m_sets[l] | frozenset(a))
    return out
