"""Directed acyclic graphs and linear structural equation models.

A linear SEM over nodes ``0..p-1`` is ``X = B^T X + eps`` with ``B[i, j]``
the weight of edge ``i -> j`` and independent Gaussian noises
``eps_i ~ N(noise_mean[i], omega[i])``.  This module builds such models,
applies soft interventions to them, samples from them, and computes their
population covariance/precision matrices, restricted (marginalized)
sub-models, and intervention-faithfulness diagnostics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .exceptions import (
    CycleDetected,
    IndexOutOfRange,
    SingularSubmatrix,
    TargetOutOfRange,
    TooLarge,
)

__all__ = [
    "Dag",
    "LinearSem",
    "InterventionSpec",
    "RestrictedSem",
    "FaithfulnessReport",
    "build_dag",
    "population_covariance",
    "population_mean",
    "population_second_moment",
    "restricted_sem",
    "apply_intervention",
    "sample",
    "check_i_faithfulness",
]


@dataclass(frozen=True)
class Dag:
    """A directed acyclic graph on nodes ``0..p-1``.

    Use :func:`build_dag` to construct one; it validates acyclicity and
    computes a topological order.
    """

    p: int
    edges: frozenset[tuple[int, int]]
    topo_order: tuple[int, ...]
    _parents: tuple[frozenset[int], ...] = field(repr=False, compare=False, default=())
    _children: tuple[frozenset[int], ...] = field(repr=False, compare=False, default=())

    def parents_of(self, i: int) -> frozenset[int]:
        return self._parents[i]

    def children_of(self, i: int) -> frozenset[int]:
        return self._children[i]

    def degree(self, i: int) -> int:
        """Total degree (in + out) of node ``i``."""
        return len(self._parents[i]) + len(self._children[i])

    def ancestors_of(self, i: int) -> frozenset[int]:
        """Strict ancestors of ``i`` (excludes ``i`` itself)."""
        seen: set[int] = set()
        queue = deque(self._parents[i])
        while queue:
            v = queue.popleft()
            if v not in seen:
                seen.add(v)
                queue.extend(self._parents[v])
        return frozenset(seen)

    def descendants_of(self, i: int) -> frozenset[int]:
        """Strict descendants of ``i`` (excludes ``i`` itself)."""
        seen: set[int] = set()
        queue = deque(self._children[i])
        while queue:
            v = queue.popleft()
            if v not in seen:
                seen.add(v)
                queue.extend(self._children[v])
        return frozenset(seen)

    def ancestors_of_set(self, nodes: Iterable[int]) -> frozenset[int]:
        """Union of strict ancestors over ``nodes`` (may include members of ``nodes``)."""
        out: set[int] = set()
        for i in nodes:
            out |= self.ancestors_of(i)
        return frozenset(out)


def build_dag(p: int, edges: Iterable[tuple[int, int]]) -> Dag:
    """Build a validated :class:`Dag`.

    Parameters
    ----------
    p : int
        Number of nodes; nodes are labeled ``0..p-1``.
    edges : iterable of (int, int)
        Ordered pairs ``(i, j)`` meaning ``i -> j``.

    Raises
    ------
    IndexOutOfRange
        If an endpoint is outside ``[0, p)``.
    CycleDetected
        If the edges contain a directed cycle.
    """
    edge_set = frozenset((int(i), int(j)) for i, j in edges)
    for i, j in edge_set:
        if not (0 <= i < p and 0 <= j < p):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside [0, {p})")
        if i == j:
            raise CycleDetected(f"self-loop at node {i}")

    parents = [set() for _ in range(p)]
    children = [set() for _ in range(p)]
    for i, j in edge_set:
        parents[j].add(i)
        children[i].add(j)

    # Kahn's algorithm; smallest-label-first for a deterministic order.
    indegree = [len(s) for s in parents]
    ready = sorted(i for i in range(p) if indegree[i] == 0)
    order: list[int] = []
    available = deque(ready)
    while available:
        v = available.popleft()
        order.append(v)
        for c in sorted(children[v]):
            indegree[c] -= 1
            if indegree[c] == 0:
                available.append(c)
    if len(order) != p:
        raise CycleDetected("edge set contains a directed cycle")

    return Dag(
        p=p,
        edges=edge_set,
        topo_order=tuple(order),
        _parents=tuple(frozenset(s) for s in parents),
        _children=tuple(frozenset(s) for s in children),
    )


@dataclass(frozen=True)
class LinearSem:
    """A linear SEM: DAG structure, edge weights ``B``, and noise parameters.

    ``B[i, j]`` is the weight of edge ``i -> j``; it must vanish off the DAG's
    edge set (entries *on* edges may be zero, e.g. after a randomized
    intervention cuts them).  ``omega`` holds strictly positive noise
    variances; ``noise_mean`` defaults to zero.
    """

    dag: Dag
    B: np.ndarray
    omega: np.ndarray
    noise_mean: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        p = self.dag.p
        B = np.asarray(self.B, dtype=float)
        omega = np.asarray(self.omega, dtype=float)
        mean = (
            np.zeros(p)
            if self.noise_mean is None
            else np.asarray(self.noise_mean, dtype=float)
        )
        if B.shape != (p, p):
            raise ValueError(f"B must be {p}x{p}, got {B.shape}")
        if omega.shape != (p,) or mean.shape != (p,):
            raise ValueError("omega and noise_mean must have length p")
        if np.any(omega <= 0):
            raise ValueError("noise variances must be strictly positive")
        mask = np.zeros((p, p), dtype=bool)
        for i, j in self.dag.edges:
            mask[i, j] = True
        if np.any(B[~mask] != 0):
            raise ValueError("B has a nonzero entry off the DAG edge set")
        for name, arr in (("B", B), ("omega", omega), ("noise_mean", mean)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.dag.p


@dataclass(frozen=True)
class InterventionSpec:
    """A soft intervention on a set of target nodes.

    ``model`` selects how each target changes:

    - ``"shift"``: the noise mean moves ``0 -> delta``; variances unchanged.
    - ``"variance"``: the noise variance is set to ``sigma_new``.
    - ``"randomized"``: incoming weights ``B[Pa(i), i]`` are cut to zero and
      the noise variance is set to ``sigma_new``.
    """

    targets: frozenset[int]
    model: Literal["shift", "variance", "randomized"]
    delta: float = 1.0
    sigma_new: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(int(t) for t in self.targets))
        if self.model not in ("shift", "variance", "randomized"):
            raise ValueError(f"unknown intervention model {self.model!r}")
        if self.sigma_new is None:
            default = 2.0 if self.model == "variance" else 1.5
            object.__setattr__(self, "sigma_new", default)
        if self.sigma_new <= 0:
            raise ValueError("sigma_new must be positive")


@dataclass(frozen=True)
class RestrictedSem:
    """Parameters of the SEM induced on a node subset by marginalization.

    ``subset`` lists the kept nodes in increasing global label; ``B_S`` and
    ``sigma_S`` use that local order.  ``B_S[k, j]`` is the weight on the
    restricted edge ``subset[k] -> subset[j]``; it is nonzero only when the
    source is an ancestor of the target in the original graph.  Note that the
    noises of a restricted model may be correlated, so ``(B_S, sigma_S)``
    alone do not determine the restricted precision matrix for arbitrary
    subsets; they are the per-node regression quantities.
    """

    subset: tuple[int, ...]
    B_S: np.ndarray
    sigma_S: np.ndarray


@dataclass(frozen=True)
class FaithfulnessReport:
    """Outcome of the intervention-faithfulness diagnostic.

    ``violations`` holds tuples ``(condition, subset, (i, j), magnitude)``
    where ``condition`` is 1, 2, or 3 and ``magnitude`` is the offending
    |difference| that should have exceeded the tolerance.
    """

    holds: bool
    violations: tuple[tuple[int, tuple[int, ...], tuple[int, int], float], ...]


def population_covariance(sem: LinearSem) -> tuple[np.ndarray, np.ndarray]:
    """Population covariance and precision of a linear SEM.

    Returns
    -------
    (Sigma, Theta) : pair of (p, p) arrays
        ``Sigma = (I - B^T)^{-1} Omega (I - B)^{-1}`` and
        ``Theta = (I - B) Omega^{-1} (I - B)^T``; ``Sigma @ Theta`` is the
        identity up to rounding.
    """
    p = sem.p
    A = np.eye(p) - sem.B
    theta = (A / sem.omega) @ A.T
    Ainv = np.linalg.inv(A)
    sigma = Ainv.T * sem.omega @ Ainv
    return sigma, theta


def population_mean(sem: LinearSem) -> np.ndarray:
    """Population mean ``(I - B^T)^{-1} noise_mean``."""
    A = np.eye(sem.p) - sem.B
    return np.linalg.solve(A.T, sem.noise_mean)


def population_second_moment(sem: LinearSem) -> np.ndarray:
    """Uncentered second-moment matrix ``E[X X^T] = Sigma + mu mu^T``."""
    sigma, _ = population_covariance(sem)
    if not np.any(sem.noise_mean):
        return sigma
    mu = population_mean(sem)
    return sigma + np.outer(mu, mu)


def restricted_sem(sem: LinearSem, subset: Iterable[int]) -> RestrictedSem:
    """Marginalize a linear SEM onto a node subset.

    For each kept node ``j`` with outside ancestors ``U_j = An(j) \\ S``, the
    restricted noise variance and incoming weights are

    ``sigma_{S,j}^2 = sigma_j^4 / (sigma_j^2 - b^T Phi^{-1} b)`` and
    ``[B_S]_{k,j} = (sigma_{S,j}^2 / sigma_j^2)
    (B_{k,j} - b^T Phi^{-1} [Theta_{An}]_{U_j,k})``

    where ``b = B[U_j, j]``, ``Theta_An`` is the precision of the sub-model on
    ``An(j) | {j}``, and ``Phi`` its ``U_j`` block.  Weights onto ``j`` from
    non-ancestors are zero.
    """
    s = sorted({int(v) for v in subset})
    if not s:
        raise ValueError("subset must be nonempty")
    for v in s:
        if not (0 <= v < sem.p):
            raise IndexOutOfRange(f"node {v} outside [0, {sem.p})")
    pos = {v: k for k, v in enumerate(s)}
    m = len(s)
    B_S = np.zeros((m, m))
    sigma_S = np.zeros(m)

    for j in s:
        anc = sem.dag.ancestors_of(j)
        closure = sorted(anc | {j})
        u = sorted(anc - set(s))
        sj2 = sem.omega[j]
        in_s = [k for k in s if k in anc]
        if not u:
            sigma_S[pos[j]] = sj2
            for k in in_s:
                B_S[pos[k], pos[j]] = sem.B[k, j]
            continue
        # Precision of the sub-SEM on An(j) ∪ {j}: ancestral sets are closed,
        # so it is just the closed form on the induced sub-model.
        idx = np.asarray(closure)
        A_sub = np.eye(len(idx)) - sem.B[np.ix_(idx, idx)]
        theta_an = (A_sub / sem.omega[idx]) @ A_sub.T
        loc = {v: t for t, v in enumerate(closure)}
        u_loc = [loc[v] for v in u]
        b = sem.B[u, j]
        phi = theta_an[np.ix_(u_loc, u_loc)]
        try:
            phi_inv_b = np.linalg.solve(phi, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSubmatrix(
                f"ancestor precision block for node {j} is singular"
            ) from exc
        denom = sj2 - b @ phi_inv_b
        if denom <= 0:
            raise SingularSubmatrix(
                f"nonpositive residual variance for node {j} in restriction"
            )
        sj2_S = sj2**2 / denom
        sigma_S[pos[j]] = sj2_S
        for k in in_s:
            corr = phi_inv_b @ theta_an[u_loc, loc[k]]
            B_S[pos[k], pos[j]] = (sj2_S / sj2) * (sem.B[k, j] - corr)

    return RestrictedSem(subset=tuple(s), B_S=B_S, sigma_S=sigma_S)


def apply_intervention(
    sem: LinearSem, spec: InterventionSpec, rng_seed: int | None = None
) -> LinearSem:
    """Return the post-intervention SEM.

    ``rng_seed`` is accepted for interface stability; the three implemented
    models are deterministic given ``spec``.
    """
    del rng_seed
    for t in spec.targets:
        if not (0 <= t < sem.p):
            raise TargetOutOfRange(f"target {t} outside [0, {sem.p})")
    B = np.array(sem.B)
    omega = np.array(sem.omega)
    mean = np.array(sem.noise_mean)
    for t in spec.targets:
        if spec.model == "shift":
            mean[t] = mean[t] + spec.delta
        elif spec.model == "variance":
            if spec.sigma_new == omega[t]:
                raise ValueError(
                    f"variance intervention on node {t} must change the variance"
                )
            omega[t] = spec.sigma_new
        else:  # randomized
            if spec.sigma_new == omega[t]:
                raise ValueError(
                    f"randomized intervention on node {t} must change the variance"
                )
            B[:, t] = 0.0
            omega[t] = spec.sigma_new
    return LinearSem(dag=sem.dag, B=B, omega=omega, noise_mean=mean)


def sample(
    sem: LinearSem,
    n: int,
    rng_seed: int | np.random.SeedSequence | np.random.Generator,
) -> np.ndarray:
    """Draw ``n`` i.i.d. rows of ``X = B^T X + eps``.

    Deterministic given the seed; independent of thread count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    eps = rng.standard_normal((n, sem.p)) * np.sqrt(sem.omega) + sem.noise_mean
    A = np.eye(sem.p) - sem.B
    return np.linalg.solve(A.T, eps.T).T


def _intervened_nodes(sem1: LinearSem, sem2: LinearSem) -> frozenset[int]:
    changed = set(np.nonzero(sem1.omega != sem2.omega)[0])
    changed |= set(np.nonzero(sem1.noise_mean != sem2.noise_mean)[0])
    changed |= set(np.nonzero(np.any(sem1.B != sem2.B, axis=0))[0])
    return frozenset(int(v) for v in changed)


def check_i_faithfulness(
    sem1: LinearSem,
    sem2: LinearSem,
    subsets: Literal["exhaustive", "queried"] = "queried",
    tol: float = 1e-8,
) -> FaithfulnessReport:
    """Check the three intervention-faithfulness conditions numerically.

    For each examined subset ``S`` (all nonempty subsets under
    ``"exhaustive"``, enforced only up to p = 12; the subsets the target
    estimator would visit under ``"queried"``), with restricted models
    ``(B_S, sigma_S)`` of both SEMs and exact
    ``Delta = (M1_{S,S})^{-1} - (M2_{S,S})^{-1}`` where ``M`` is the
    uncentered second moment (equal to the covariance for zero-mean
    models, and the matrix the estimator inverts by default):

    1. a target's noise-variance change must survive restriction;
    2. a restricted noise-variance change must show in the precision diagonal;
    3. a nonzero restricted weight onto a target must show in the
       corresponding off-diagonal precision difference.

    Equality means ``|difference| <= tol`` throughout.
    """
    if sem1.dag.p != sem2.dag.p:
        raise ValueError("models must share the node set")
    p = sem1.dag.p
    targets = _intervened_nodes(sem1, sem2)

    if subsets == "exhaustive":
        if p > 12:
            raise TooLarge(f"exhaustive policy enforced only up to p=12, got {p}")
        nodes = list(range(p))
        candidates = []
        for mask in range(1, 1 << p):
            candidates.append(frozenset(v for v in nodes if mask >> v & 1))
    elif subsets == "queried":
        from .oracle import algorithm_subsets  # deferred: oracle imports sem

        candidates = [s for s in algorithm_subsets(sem1.dag, targets) if s]
    else:
        raise ValueError(f"unknown subset policy {subsets!r}")

    sigma1_full = population_second_moment(sem1)
    sigma2_full = population_second_moment(sem2)

    violations: list[tuple[int, tuple[int, ...], tuple[int, int], float]] = []
    for s in candidates:
        ss = tuple(sorted(s))
        idx = np.asarray(ss)
        try:
            delta = np.linalg.inv(sigma1_full[np.ix_(idx, idx)]) - np.linalg.inv(
                sigma2_full[np.ix_(idx, idx)]
            )
        except np.linalg.LinAlgError as exc:
            raise SingularSubmatrix(f"moment block {ss} singular") from exc
        r1 = restricted_sem(sem1, ss)
        r2 = restricted_sem(sem2, ss)
        pos = {v: k for k, v in enumerate(ss)}
        for i in ss:
            li = pos[i]
            sig_gap = abs(r1.sigma_S[li] - r2.sigma_S[li])
            if i in targets and abs(sem1.omega[i] - sem2.omega[i]) > tol:
                if sig_gap <= tol:
                    violations.append((1, ss, (i, i), sig_gap))
            if sig_gap > tol and abs(delta[li, li]) <= tol:
                violations.append((2, ss, (i, i), abs(delta[li, li])))
            if i in targets:
                for j in ss:
                    if j == i:
                        continue
                    lj = pos[j]
                    if max(abs(r1.B_S[lj, li]), abs(r2.B_S[lj, li])) > tol:
                        if abs(delta[li, lj]) <= tol:
                            violations.append((3, ss, (i, j), abs(delta[li, lj])))
    return FaithfulnessReport(holds=not violations, violations=tuple(violations))
