"""Completed partially directed acyclic graphs and Meek-rule closure.

A CPDAG represents a Markov equivalence class: skeleton edges that share an
orientation in every member are directed, the rest undirected.  This module
computes the CPDAG of a DAG (v-structures plus Meek rules R1-R4) and exposes
the closure operation used to propagate externally supplied orientations.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .sem import Dag

__all__ = ["Cpdag", "cpdag_from_dag", "meek_closure"]


@dataclass(frozen=True)
class Cpdag:
    """Partially directed graph: ``directed`` pairs (i, j) mean ``i -> j``,
    ``undirected`` pairs are stored with ``i < j``.

    ``conflicts`` and ``skipped`` record orientation requests that were
    rejected while refining (kept empty for freshly computed CPDAGs).
    """

    p: int
    directed: frozenset[tuple[int, int]]
    undirected: frozenset[tuple[int, int]]
    conflicts: tuple[tuple[int, int], ...] = ()
    skipped: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        und = frozenset((min(i, j), max(i, j)) for i, j in self.undirected)
        object.__setattr__(self, "undirected", und)
        for i, j in self.directed:
            key = (min(i, j), max(i, j))
            if key in und:
                raise ValueError(f"edge {key} is both directed and undirected")
        skel = {(min(i, j), max(i, j)) for i, j in self.directed}
        if len(skel) != len(self.directed):
            raise ValueError("an edge is directed both ways")

    def skeleton(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            {(min(i, j), max(i, j)) for i, j in self.directed} | self.undirected
        )

    def adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.skeleton()

    def has_directed(self, i: int, j: int) -> bool:
        return (i, j) in self.directed


def _neighbor_maps(p, directed, undirected):
    pa = [set() for _ in range(p)]
    ch = [set() for _ in range(p)]
    nb = [set() for _ in range(p)]
    for i, j in directed:
        pa[j].add(i)
        ch[i].add(j)
    for i, j in undirected:
        nb[i].add(j)
        nb[j].add(i)
    return pa, ch, nb


def meek_closure(
    p: int,
    directed: set[tuple[int, int]],
    undirected: set[tuple[int, int]],
) -> tuple[frozenset[tuple[int, int]], frozenset[tuple[int, int]]]:
    """Close a partial orientation under Meek rules R1-R4.

    R1: z -> x, x - y, z and y nonadjacent                    =>  x -> y
    R2: x -> z -> y, x - y                                    =>  x -> y
    R3: x - z1, x - z2, z1 -> y, z2 -> y, x - y,
        z1 and z2 nonadjacent                                 =>  x -> y
    R4: x - z, z -> w, w -> y, x - y, x and w adjacent,
        z and y nonadjacent                                   =>  x -> y

    Inputs are consumed as plain sets of ordered/unordered pairs; returns the
    closed (directed, undirected) edge sets.  Orientation requests against an
    already-directed edge are ignored (first orientation wins).
    """
    directed = set(directed)
    undirected = {(min(i, j), max(i, j)) for i, j in undirected}
    pa, ch, nb = _neighbor_maps(p, directed, undirected)

    def adjacent(x, y):
        return y in nb[x] or y in ch[x] or y in pa[x]

    def orient(x, y) -> bool:
        key = (min(x, y), max(x, y))
        if key not in undirected:
            return False
        undirected.discard(key)
        directed.add((x, y))
        nb[x].discard(y)
        nb[y].discard(x)
        pa[y].add(x)
        ch[x].add(y)
        return True

    changed = True
    while changed:
        changed = False
        for a, b in list(undirected):
            for x, y in ((a, b), (b, a)):
                # R1: z -> x, x - y, z and y nonadjacent => x -> y
                if any(not adjacent(z, y) for z in pa[x]):
                    changed |= orient(x, y)
                    break
                # R2: x -> z -> y with x - y => x -> y
                if ch[x] & pa[y]:
                    changed |= orient(x, y)
                    break
                # R3: x - z1, x - z2, z1 -> y, z2 -> y, z1 and z2 nonadjacent
                done = False
                for z1, z2 in combinations(nb[x] & pa[y], 2):
                    if not adjacent(z1, z2):
                        changed |= orient(x, y)
                        done = True
                        break
                if done:
                    break
                # R4: x - z, z -> w, w -> y, z and y nonadjacent, x - w or x adj w
                for z in list(nb[x]):
                    if any(
                        w in pa[y] and not adjacent(z, y) and adjacent(x, w)
                        for w in ch[z]
                    ):
                        changed |= orient(x, y)
                        done = True
                        break
                if done:
                    break
    return frozenset(directed), frozenset(undirected)


def cpdag_from_dag(dag: Dag) -> Cpdag:
    """CPDAG of a DAG: v-structure orientations closed under Meek rules."""
    directed: set[tuple[int, int]] = set()
    skeleton = {(min(i, j), max(i, j)) for i, j in dag.edges}
    for j in range(dag.p):
        for a, b in combinations(sorted(dag.parents_of(j)), 2):
            if (min(a, b), max(a, b)) not in skeleton:
                directed.add((a, j))
                directed.add((b, j))
    undirected = {
        e
        for e in skeleton
        if (e[0], e[1]) not in directed and (e[1], e[0]) not in directed
    }
    d, u = meek_closure(dag.p, directed, undirected)
    return Cpdag(p=dag.p, directed=d, undirected=u)
