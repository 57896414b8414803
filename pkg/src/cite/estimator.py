"""Intervention-target estimation from a pair of covariance matrices.

Given covariance (or uncentered second-moment) matrices of an observational
and an interventional environment of the same linear SEM, the staged
estimator recovers the intervened node set and the non-intervened parents of
intervened nodes using only repeated sparse precision-difference estimates:

1. one estimate on all nodes finds the changed set ``S_delta`` and a
   covariance-diagonal comparison splits off the non-intervened source
   nodes ``J0``;
2. size-2 estimates group the remaining nodes into equivalence classes by
   their source ancestral sets, ordered so no later class's source set is a
   strict subset of an earlier one's;
3. each class is processed by estimating on ``M_l | A`` for every subset
   ``A`` of the class, marking a node non-intervened when some subset zeroes
   its diagonal; parents and cross-class orientations are then read off the
   cached estimates without further solver calls.

The resulting orientations refine a CPDAG into its interventional CPDAG.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Literal, Mapping

from .cpdag import Cpdag, meek_closure
from .exceptions import CacheIncomplete, ClassTooLarge, EstimationStageError
from .pde import (
    AdmmConfig,
    CovariancePair,
    PrecisionDiff,
    estimate_precision_difference,
    exact_precision_difference,
)

__all__ = [
    "CiteConfig",
    "ClassInfo",
    "ClassDecomposition",
    "ClassCache",
    "TargetEstimate",
    "find_changed_nodes",
    "find_source_nodes",
    "source_ancestral_sets",
    "form_equivalence_classes",
    "process_equivalence_class",
    "find_parents",
    "orient_cross_class_edges",
    "orient_within_class_edges",
    "estimate_targets",
    "refine_cpdag",
]


@dataclass(frozen=True)
class CiteConfig:
    """Hyperparameters of the staged estimator.

    ``lambda1`` regularizes the full-node and per-class estimates (steps 1
    and 3), ``lambda2`` the size-2 estimates of step 2, and ``lambda3`` sets
    the threshold for parent decisions on the cached estimates (overridable
    via ``epsilon3``).  ``epsilon`` (support cut-off) and ``tau_var`` (the
    relative tolerance of the source-node variance comparison) default to
    0.1 and 0.05 on empirical input and to 1e-8 on population input; leave
    them ``None`` to get that resolution.
    """

    lambda1: float = 0.2
    lambda2: float = 0.2
    lambda3: float = 0.1
    epsilon: float | None = None
    epsilon3: float | None = None
    tau_var: float | None = None
    budget: int = 15
    backend: Literal["admm", "exact"] = "admm"
    rho: float = 1.0
    max_iter: int = 2000
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    j0_via_pde: bool = False
    workers: int = 1

    def resolve(self, pair: CovariancePair) -> "ResolvedConfig":
        population = pair.is_population
        eps = self.epsilon if self.epsilon is not None else (1e-8 if population else 0.1)
        tau = self.tau_var if self.tau_var is not None else (1e-8 if population else 0.05)
        eps3 = self.epsilon3
        if eps3 is None:
            eps3 = 1e-8 if population else self.lambda3
        return ResolvedConfig(base=self, epsilon=eps, epsilon3=eps3, tau_var=tau)


@dataclass(frozen=True)
class ResolvedConfig:
    """A :class:`CiteConfig` with input-dependent defaults filled in."""

    base: CiteConfig
    epsilon: float
    epsilon3: float
    tau_var: float

    def admm(self, lam: float) -> AdmmConfig:
        b = self.base
        return AdmmConfig(
            lam=lam,
            rho=b.rho,
            max_iter=b.max_iter,
            eps_abs=b.eps_abs,
            eps_rel=b.eps_rel,
            epsilon_threshold=self.epsilon,
        )


class _PdeRunner:
    """Dispatches solver calls to the chosen backend and counts them."""

    def __init__(self, pair: CovariancePair, config: ResolvedConfig):
        self.pair = pair
        self.config = config
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, subset: Iterable[int], lam: float) -> PrecisionDiff:
        with self._lock:
            self.calls += 1
        if self.config.base.backend == "exact":
            return exact_precision_difference(self.pair, subset, self.config.epsilon)
        return estimate_precision_difference(self.pair, subset, self.config.admm(lam))


@dataclass(frozen=True)
class ClassInfo:
    """One equivalence class: its members and their shared source set."""

    members: frozenset[int]
    sources: frozenset[int]


@dataclass(frozen=True)
class ClassDecomposition:
    """Output of the decomposition stages.

    ``classes`` are ordered; ``m_sets[l]`` is the conditioning core used
    when processing class ``l`` (its sources plus every earlier class whose
    source set is a strict subset).
    """

    s_delta: frozenset[int]
    j0: frozenset[int]
    source_sets: Mapping[int, frozenset[int]]
    classes: tuple[ClassInfo, ...]
    m_sets: tuple[frozenset[int], ...]

    @property
    def p_delta(self) -> int:
        return len(self.s_delta)

    @property
    def max_class_size(self) -> int:
        return max((len(c.members) for c in self.classes), default=0)

    def class_of(self, node: int) -> int:
        for l, c in enumerate(self.classes):
            if node in c.members:
                return l
        raise KeyError(f"node {node} is in no class")


@dataclass(frozen=True)
class ClassCache:
    """Cached per-class estimates: subset ``A -> PrecisionDiff`` on ``M | A``.

    ``witnesses[k]`` is the first (smallest, in size-then-lexicographic
    enumeration order) subset whose estimate zeroes the diagonal at ``k``;
    ``b_indices`` lists the earlier classes absorbed into ``m_set``.
    """

    m_set: frozenset[int]
    members: frozenset[int]
    diffs: Mapping[frozenset[int], PrecisionDiff]
    witnesses: Mapping[int, frozenset[int]]
    b_indices: tuple[int, ...] = ()

    def complete(self) -> bool:
        return len(self.diffs) == 1 << len(self.members)


@dataclass(frozen=True)
class TargetEstimate:
    """Final estimator output.

    ``parents`` holds edges ``(j, i)`` with ``i`` an estimated target and
    ``j`` an estimated non-target; ``extra_orientations`` holds decisions
    ``(k, i, is_parent)`` for intervened pairs in distinct classes;
    ``within_class_orientations`` holds the same kind of decision for
    (non-target, target) pairs sharing one class — the only target
    neighbors the parent search cannot reach, needed to refine a CPDAG
    without mis-orienting such edges.
    """

    targets: frozenset[int]
    parents: frozenset[tuple[int, int]]
    extra_orientations: tuple[tuple[int, int, bool], ...]
    decomposition: ClassDecomposition
    per_stage_timings: Mapping[str, float]
    pde_call_count: int
    within_class_orientations: tuple[tuple[int, int, bool], ...] = ()


def _subsets(members: Iterable[int]) -> list[frozenset[int]]:
    """All subsets, smallest first, lexicographic within a size."""
    base = sorted(members)
    out: list[frozenset[int]] = []
    for r in range(len(base) + 1):
        out.extend(frozenset(c) for c in combinations(base, r))
    return out


def find_changed_nodes(
    pair: CovariancePair, config: CiteConfig | ResolvedConfig | None = None
) -> frozenset[int]:
    """Nodes whose precision-difference diagonal is nonzero (one solver call
    on all nodes)."""
    resolved = _as_resolved(pair, config)
    runner = _PdeRunner(pair, resolved)
    return _changed_nodes(runner, resolved)


def _changed_nodes(runner: _PdeRunner, config: ResolvedConfig) -> frozenset[int]:
    diff = runner(range(runner.pair.p), config.base.lambda1)
    return frozenset(
        int(k) for k in range(runner.pair.p) if diff.delta[k, k] != 0.0
    )


def find_source_nodes(
    pair: CovariancePair, s_delta: Iterable[int], tol: float
) -> frozenset[int]:
    """Members of ``s_delta`` whose marginal (co)variance diagonal is equal
    across the two environments within relative tolerance ``tol``.

    Needs no solver call: a changed node's own noise is invariant exactly
    when its marginal second moment is.
    """
    out = set()
    for j in s_delta:
        a = pair.sigma1[j, j]
        b = pair.sigma2[j, j]
        scale = max(abs(a), abs(b), 1e-300)
        if abs(a - b) <= tol * scale:
            out.add(int(j))
    return frozenset(out)


def _source_nodes_via_pde(
    runner: _PdeRunner, config: ResolvedConfig, s_delta: frozenset[int]
) -> frozenset[int]:
    out = set()
    for j in sorted(s_delta):
        diff = runner([j], config.base.lambda2)
        if diff.delta[0, 0] == 0.0:
            out.add(j)
    return frozenset(out)


def source_ancestral_sets(
    pair: CovariancePair,
    s_delta: Iterable[int],
    j0: Iterable[int],
    config: CiteConfig | ResolvedConfig | None = None,
) -> dict[int, frozenset[int]]:
    """For each changed non-source node ``k``, the sources sharing a common
    ancestor with it: one size-2 estimate per (source, node) pair, nonzero
    off-diagonal meaning shared ancestry."""
    resolved = _as_resolved(pair, config)
    runner = _PdeRunner(pair, resolved)
    return _source_sets(runner, resolved, frozenset(s_delta), frozenset(j0))


def _source_sets(
    runner: _PdeRunner,
    config: ResolvedConfig,
    s_delta: frozenset[int],
    j0: frozenset[int],
) -> dict[int, frozenset[int]]:
    rest = sorted(s_delta - j0)
    sources = sorted(j0)
    out: dict[int, frozenset[int]] = {}
    for k in rest:
        members = set()
        for j in sources:
            diff = runner({j, k}, config.base.lambda2)
            if diff.entry(j, k) != 0.0:
                members.add(j)
        out[k] = frozenset(members)
    return out


def form_equivalence_classes(
    source_sets: Mapping[int, frozenset[int]],
) -> tuple[ClassInfo, ...]:
    """Group nodes with identical source sets; order classes by source-set
    size, then lexicographically.

    Size-ascending order guarantees the required property that no later
    class's source set is a strict subset of an earlier one's; nodes with an
    empty source set form the first class.
    """
    groups: dict[frozenset[int], set[int]] = {}
    for k, src in source_sets.items():
        groups.setdefault(frozenset(src), set()).add(int(k))
    infos = [
        ClassInfo(members=frozenset(v), sources=k) for k, v in groups.items()
    ]
    infos.sort(
        key=lambda c: (len(c.sources), sorted(c.sources), sorted(c.members))
    )
    return tuple(infos)


def _m_sets(
    classes: tuple[ClassInfo, ...],
) -> tuple[tuple[frozenset[int], ...], tuple[tuple[int, ...], ...]]:
    """Conditioning core per class (sources plus all earlier classes whose
    source set is strictly contained in this one's) and the indices of
    those absorbed classes."""
    m_sets = []
    b_lists = []
    for l, cls in enumerate(classes):
        m = set(cls.sources)
        bs = []
        for b in range(l):
            if classes[b].sources < cls.sources:
                m |= classes[b].members
                bs.append(b)
        m_sets.append(frozenset(m))
        b_lists.append(tuple(bs))
    return tuple(m_sets), tuple(b_lists)


def process_equivalence_class(
    m: Iterable[int],
    a: Iterable[int],
    pair: CovariancePair,
    config: CiteConfig | ResolvedConfig | None = None,
    budget: int = 15,
) -> tuple[frozenset[int], frozenset[int], ClassCache]:
    """Estimate on ``M | A`` for every subset ``A`` of the class.

    Returns ``(J, I, cache)``: a member goes to ``J`` (non-intervened) when
    some subset containing it zeroes its diagonal, else to ``I``.  The cache
    retains every estimate plus, per ``J`` member, the first zeroing subset.
    """
    resolved = _as_resolved(pair, config)
    runner = _PdeRunner(pair, resolved)
    return _process_class(
        runner, resolved, frozenset(m), frozenset(a), budget
    )


def _process_class(
    runner: _PdeRunner,
    config: ResolvedConfig,
    m: frozenset[int],
    a: frozenset[int],
    budget: int,
    b_indices: tuple[int, ...] = (),
) -> tuple[frozenset[int], frozenset[int], ClassCache]:
    if len(a) > budget:
        raise ClassTooLarge(
            f"class of size {len(a)} exceeds the subset budget {budget}"
        )
    subsets = _subsets(a)
    lam = config.base.lambda1
    workers = config.base.workers
    if workers > 1 and len(subsets) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: runner(m | s, lam), subsets))
        diffs = dict(zip(subsets, results))
    else:
        diffs = {s: runner(m | s, lam) for s in subsets}

    witnesses: dict[int, frozenset[int]] = {}
    j_set: set[int] = set()
    for s in subsets:  # size-ascending: first hit is the smallest witness
        diff = diffs[s]
        for k in sorted(s):
            if k in j_set:
                continue
            if diff.entry(k, k) == 0.0:
                j_set.add(k)
                witnesses[k] = s
    i_set = a - j_set
    cache = ClassCache(
        m_set=m,
        members=a,
        diffs=diffs,
        witnesses=witnesses,
        b_indices=b_indices,
    )
    return frozenset(j_set), frozenset(i_set), cache


def find_parents(
    targets: Iterable[int],
    decomposition: ClassDecomposition,
    caches: Mapping[int, ClassCache],
    config: CiteConfig | ResolvedConfig | None = None,
    pair: CovariancePair | None = None,
    epsilon3: float | None = None,
) -> frozenset[tuple[int, int]]:
    """Non-intervened parents of each estimated target, from cached
    estimates only (no new solver calls).

    A candidate ``j`` from the target's conditioning core ``M`` is a parent
    of ``i`` exactly when no cached estimate on a subset containing ``i``
    puts a (near-)zero at entry ``(j, i)``; the raw (pre-threshold) entries
    are compared against the parent threshold ``epsilon3``.
    """
    eps3 = _parent_epsilon(config, pair, epsilon3)
    targets = frozenset(targets)
    out: set[tuple[int, int]] = set()
    for i in sorted(targets):
        l = decomposition.class_of(i)
        if l not in caches:
            raise CacheIncomplete(f"no cache for class {l}")
        cache = caches[l]
        if not cache.complete():
            raise CacheIncomplete(f"cache for class {l} is missing subsets")
        for j in sorted(cache.m_set - targets):
            if _is_parent(cache, j, i, eps3):
                out.add((j, i))
    return frozenset(out)


def _is_parent(cache: ClassCache, j: int, i: int, eps3: float) -> bool:
    seen = False
    for s, diff in cache.diffs.items():
        if i not in s or j not in (cache.m_set | s):
            continue
        seen = True
        if abs(diff.raw_entry(j, i)) < eps3:
            return False
    if not seen:
        raise CacheIncomplete(f"no cached subset contains both {j} and {i}")
    return True


def orient_cross_class_edges(
    targets: Iterable[int],
    decomposition: ClassDecomposition,
    caches: Mapping[int, ClassCache],
    config: CiteConfig | ResolvedConfig | None = None,
    pair: CovariancePair | None = None,
    epsilon3: float | None = None,
) -> tuple[tuple[int, int, bool], ...]:
    """Parent/non-parent decisions for intervened pairs in distinct classes.

    For targets ``k`` in an earlier class and ``i`` in a later one, applies
    the same no-zeroing-subset criterion to entry ``(k, i)`` of the cached
    estimates of ``i``'s class.  When ``k`` does not reach ``i``'s
    conditioning core (incomparable source sets), ``k`` cannot be an
    ancestor and the pair is reported as a non-edge directly.
    """
    eps3 = _parent_epsilon(config, pair, epsilon3)
    targets = frozenset(targets)
    decisions: list[tuple[int, int, bool]] = []
    for i in sorted(targets):
        ci = decomposition.class_of(i)
        for k in sorted(targets):
            if k == i or decomposition.class_of(k) >= ci:
                continue
            cache = caches.get(ci)
            if cache is None or not cache.complete():
                raise CacheIncomplete(f"no complete cache for class {ci}")
            if k not in cache.m_set:
                decisions.append((k, i, False))
                continue
            decisions.append((k, i, _is_parent(cache, k, i, eps3)))
    return tuple(decisions)


def orient_within_class_edges(
    targets: Iterable[int],
    decomposition: ClassDecomposition,
    caches: Mapping[int, ClassCache],
    config: CiteConfig | ResolvedConfig | None = None,
    pair: CovariancePair | None = None,
    epsilon3: float | None = None,
) -> tuple[tuple[int, int, bool], ...]:
    """Parent/non-parent decisions for (non-target, target) pairs sharing
    one class, by the no-zeroing-subset criterion on the class's cache.

    These pairs fall outside the parent search (its candidates come from
    the class core ``M``, which never contains same-class members), yet a
    CPDAG refinement must know them: a same-class neighbor of a target may
    be a parent, so orienting blindly away from targets is wrong there.
    """
    eps3 = _parent_epsilon(config, pair, epsilon3)
    targets = frozenset(targets)
    decisions: list[tuple[int, int, bool]] = []
    for l, cls in enumerate(decomposition.classes):
        hit = sorted(cls.members & targets)
        missed = sorted(cls.members - targets)
        if not hit or not missed:
            continue
        cache = caches.get(l)
        if cache is None or not cache.complete():
            raise CacheIncomplete(f"no complete cache for class {l}")
        for i in hit:
            for j in missed:
                decisions.append((j, i, _is_parent(cache, j, i, eps3)))
    return tuple(decisions)


def estimate_targets(
    pair: CovariancePair, config: CiteConfig | None = None
) -> TargetEstimate:
    """Run the full staged estimator on a covariance pair."""
    base = config if config is not None else CiteConfig()
    resolved = base.resolve(pair)
    runner = _PdeRunner(pair, resolved)
    timings: dict[str, float] = {}

    def stage(name, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:  # annotate with the failing stage
            raise EstimationStageError(name, exc) from exc
        timings[name] = time.perf_counter() - start
        return result

    s_delta = stage("changed_nodes", lambda: _changed_nodes(runner, resolved))
    if base.j0_via_pde:
        j0 = stage(
            "source_nodes",
            lambda: _source_nodes_via_pde(runner, resolved, s_delta),
        )
    else:
        j0 = stage(
            "source_nodes",
            lambda: find_source_nodes(pair, s_delta, resolved.tau_var),
        )
    source_sets = stage(
        "source_ancestral_sets",
        lambda: _source_sets(runner, resolved, s_delta, j0),
    )
    classes = stage(
        "equivalence_classes", lambda: form_equivalence_classes(source_sets)
    )
    m_sets, b_lists = _m_sets(classes)
    decomposition = ClassDecomposition(
        s_delta=s_delta,
        j0=j0,
        source_sets=source_sets,
        classes=classes,
        m_sets=m_sets,
    )

    caches: dict[int, ClassCache] = {}
    targets: set[int] = set()

    def process_all():
        for l, cls in enumerate(classes):
            _, i_l, cache = _process_class(
                runner,
                resolved,
                m_sets[l],
                cls.members,
                base.budget,
                b_indices=b_lists[l],
            )
            caches[l] = cache
            targets.update(i_l)

    stage("process_classes", process_all)
    parents = stage(
        "find_parents",
        lambda: find_parents(
            targets, decomposition, caches, config=resolved
        ),
    )
    extra = stage(
        "orient_cross_class",
        lambda: orient_cross_class_edges(
            targets, decomposition, caches, config=resolved
        ),
    )
    within = stage(
        "orient_within_class",
        lambda: orient_within_class_edges(
            targets, decomposition, caches, config=resolved
        ),
    )
    return TargetEstimate(
        targets=frozenset(targets),
        parents=parents,
        extra_orientations=extra,
        decomposition=decomposition,
        per_stage_timings=timings,
        pde_call_count=runner.calls,
        within_class_orientations=within,
    )


def refine_cpdag(cpdag: Cpdag, estimate: TargetEstimate) -> Cpdag:
    """Refine a CPDAG with the estimated targets and orientations.

    Applies the estimated parent edges and the within-/cross-class
    decisions, then augments the graph with a virtual intervention vertex
    (label ``p``) pointing at every estimated target so that Meek rule R1
    also orients target-to-child edges (every target neighbor not already
    oriented toward the target by a decision), closes under Meek rules,
    and drops the virtual vertex.  Orientation requests that contradict
    the input keep the input and are recorded in ``conflicts``; requests
    between non-adjacent nodes are recorded in ``skipped``.
    """
    p = cpdag.p
    zeta = p
    directed = set(cpdag.directed)
    undirected = set(cpdag.undirected)
    conflicts: list[tuple[int, int]] = []
    skipped: list[tuple[int, int]] = []

    def request(x, y):
        key = (min(x, y), max(x, y))
        if key in undirected:
            undirected.discard(key)
            directed.add((x, y))
        elif (x, y) in directed:
            pass
        elif (y, x) in directed:
            conflicts.append((x, y))
        else:
            skipped.append((x, y))

    def request_decision(k, i, is_parent):
        key = (min(k, i), max(k, i))
        if key not in undirected and (k, i) not in directed and (i, k) not in directed:
            return  # no such edge: a non-edge decision carries no request
        if is_parent:
            request(k, i)
        else:
            request(i, k)

    for j, i in sorted(estimate.parents):
        request(j, i)
    for k, i, is_parent in estimate.within_class_orientations:
        request_decision(k, i, is_parent)
    for k, i, is_parent in estimate.extra_orientations:
        request_decision(k, i, is_parent)

    directed |= {(zeta, i) for i in estimate.targets}
    d, u = meek_closure(p + 1, directed, undirected)
    d = frozenset(e for e in d if zeta not in e)
    u = frozenset(e for e in u if zeta not in e)
    return Cpdag(
        p=p,
        directed=d,
        undirected=u,
        conflicts=tuple(conflicts),
        skipped=tuple(skipped),
    )


def _as_resolved(
    pair: CovariancePair, config: CiteConfig | ResolvedConfig | None
) -> ResolvedConfig:
    if config is None:
        return CiteConfig().resolve(pair)
    if isinstance(config, ResolvedConfig):
        return config
    return config.resolve(pair)


def _parent_epsilon(
    config: CiteConfig | ResolvedConfig | None,
    pair: CovariancePair | None,
    epsilon3: float | None,
) -> float:
    if epsilon3 is not None:
        return epsilon3
    if isinstance(config, ResolvedConfig):
        return config.epsilon3
    if config is not None and pair is not None:
        return config.resolve(pair).epsilon3
    if config is not None and config.epsilon3 is not None:
        return config.epsilon3
    raise ValueError("need a resolved config, a pair, or an explicit epsilon3")
