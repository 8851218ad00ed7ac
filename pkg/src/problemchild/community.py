"""Louvain community detection on the weighted process graph.

Classic two-phase greedy modularity maximization on the undirected
projection of the graph (each directed edge contributes its weight
symmetrically). Phase 1 moves nodes to the neighboring community with
the largest modularity gain until no move gains more than EPS; phase 2
aggregates communities into super-nodes and repeats. Node visit order
is a seeded shuffle, so results are reproducible for a fixed seed.

Modularity convention (gamma = resolution):

    Q = sum_c [ W_c / m  -  gamma * (D_c / 2m)^2 ]

with m the total undirected edge weight, W_c the weight inside
community c (self-loops counted once), and D_c the community degree
(self-loops counted twice).
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Dict

from .graph import ProcessGraph

log = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class Partition:
    assignment: Dict[str, int]  # node guid -> dense community id from 0
    modularity: float


class _LevelGraph:
    """Undirected weighted graph over integer node ids, with self-loops
    (which only appear after aggregation)."""

    def __init__(self, n: int):
        self.n = n
        self.adj = [dict() for _ in range(n)]  # neighbor -> weight, no self
        self.self_w = [0.0] * n

    def add_edge(self, u: int, v: int, w: float) -> None:
        if u == v:
            self.self_w[u] += w
            return
        self.adj[u][v] = self.adj[u].get(v, 0.0) + w
        self.adj[v][u] = self.adj[v].get(u, 0.0) + w

    def degrees(self) -> list:
        return [sum(nbrs.values()) + 2.0 * self.self_w[i]
                for i, nbrs in enumerate(self.adj)]

    def total_weight(self) -> float:
        pair_w = sum(sum(nbrs.values()) for nbrs in self.adj) / 2.0
        return pair_w + sum(self.self_w)

    def quality(self, node2com: list, resolution: float) -> float:
        m = self.total_weight()
        if m <= 0:
            return 0.0
        w_in: Dict[int, float] = {}
        d_tot: Dict[int, float] = {}
        degrees = self.degrees()
        for i in range(self.n):
            c = node2com[i]
            d_tot[c] = d_tot.get(c, 0.0) + degrees[i]
            w_in[c] = w_in.get(c, 0.0) + self.self_w[i]
            for j, w in self.adj[i].items():
                if j > i and node2com[j] == c:
                    w_in[c] = w_in.get(c, 0.0) + w
        return sum(
            w_in.get(c, 0.0) / m - resolution * (d / (2.0 * m)) ** 2
            for c, d in d_tot.items())


def _one_level(g: _LevelGraph, node2com: list, m: float, resolution: float,
               rng: random.Random) -> bool:
    """Greedy node moves until a full pass makes none. Mutates node2com;
    returns whether anything moved."""
    degrees = g.degrees()
    sigma_tot: Dict[int, float] = {}
    for i in range(g.n):
        c = node2com[i]
        sigma_tot[c] = sigma_tot.get(c, 0.0) + degrees[i]

    order = list(range(g.n))
    moved_any = False
    improved = True
    while improved:
        improved = False
        rng.shuffle(order)
        for i in order:
            com_i = node2com[i]
            k_i = degrees[i]
            neigh_w: Dict[int, float] = {}
            for j, w in g.adj[i].items():
                c = node2com[j]
                neigh_w[c] = neigh_w.get(c, 0.0) + w

            sigma_tot[com_i] -= k_i
            norm = resolution * k_i / (2.0 * m * m)
            base_gain = (neigh_w.get(com_i, 0.0) / m
                         - sigma_tot[com_i] * norm)
            best_com, best_gain = com_i, base_gain
            for c in sorted(neigh_w):
                if c == com_i:
                    continue
                gain = neigh_w[c] / m - sigma_tot[c] * norm
                if gain > best_gain:
                    best_com, best_gain = c, gain

            if best_com != com_i and best_gain - base_gain > EPS:
                node2com[i] = best_com
                sigma_tot[best_com] = sigma_tot.get(best_com, 0.0) + k_i
                improved = True
                moved_any = True
            else:
                sigma_tot[com_i] += k_i
    return moved_any


def _renumber(node2com: list) -> list:
    mapping: Dict[int, int] = {}
    out = []
    for c in node2com:
        if c not in mapping:
            mapping[c] = len(mapping)
        out.append(mapping[c])
    return out


def _aggregate(g: _LevelGraph, node2com: list) -> _LevelGraph:
    n_coms = max(node2com) + 1
    agg = _LevelGraph(n_coms)
    for i in range(g.n):
        ci = node2com[i]
        agg.self_w[ci] += g.self_w[i]
        for j, w in g.adj[i].items():
            if j > i:
                agg.add_edge(ci, node2com[j], w)
    return agg


def louvain(graph: ProcessGraph, resolution: float = 1.0,
            seed: int = 0) -> Partition:
    """Partition the graph into communities and stamp community_id onto
    every node. Empty graph -> empty partition; weightless graph ->
    all-singleton partition with modularity 0."""
    guids = list(graph.nodes)
    if not guids:
        return Partition(assignment={}, modularity=0.0)

    index = {guid: i for i, guid in enumerate(guids)}
    level = _LevelGraph(len(guids))
    for e in graph.edges:
        level.add_edge(index[e.parent_guid], index[e.child_guid], e.weight)

    m = level.total_weight()
    if m <= 0:
        assignment = {guid: i for i, guid in enumerate(guids)}
        for guid, c in assignment.items():
            graph.nodes[guid].community_id = c
        return Partition(assignment=assignment, modularity=0.0)

    rng = random.Random(seed)
    membership = list(range(len(guids)))  # original node -> current community
    node2com = list(range(level.n))
    quality = level.quality(node2com, resolution)
    while True:
        moved = _one_level(level, node2com, m, resolution, rng)
        new_quality = level.quality(node2com, resolution)
        if new_quality < quality - 1e-12:
            raise AssertionError(
                f"modularity decreased across a phase: {quality} -> {new_quality}")
        node2com = _renumber(node2com)
        membership = [node2com[c] for c in membership]
        if not moved or new_quality - quality <= EPS:
            break
        quality = new_quality
        level = _aggregate(level, node2com)
        node2com = list(range(level.n))

    dense = _renumber(membership)
    assignment = {guid: dense[i] for i, guid in enumerate(guids)}
    for guid, c in assignment.items():
        graph.nodes[guid].community_id = c
    return Partition(assignment=assignment,
                     modularity=modularity(graph, assignment, resolution))


def modularity(graph: ProcessGraph, assignment: Dict[str, int],
               resolution: float = 1.0) -> float:
    """Recompute Q from scratch for an assignment covering all nodes."""
    missing = [guid for guid in graph.nodes if guid not in assignment]
    if missing:
        raise ValueError(f"assignment misses {len(missing)} node(s), "
                         f"e.g. {missing[0]!r}")
    guids = list(graph.nodes)
    index = {guid: i for i, guid in enumerate(guids)}
    level = _LevelGraph(len(guids))
    for e in graph.edges:
        level.add_edge(index[e.parent_guid], index[e.child_guid], e.weight)
    node2com = [assignment[guid] for guid in guids]
    return level.quality(node2com, resolution)
