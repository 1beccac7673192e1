"""Graph model and the flow/cut/connectivity primitives everything builds on.

An instance is an undirected multigraph with non-negative edge costs plus a
list of group demands; each demand asks for a number of edge-disjoint paths
between two vertex sets.  Edge identities are stable indices into the edge
list, so parallel edges are distinct objects.

All operations here are pure: an :class:`Instance` is immutable after
construction and can be shared freely across threads.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

#: Absolute tolerance for flow / cut-capacity equality.
FLOW_TOL = 1e-9

# Residual capacity at or below this is treated as exhausted.
_RESIDUAL_EPS = 1e-12


@dataclass(frozen=True)
class DemandPair:
    """A group demand: ``requirement`` edge-disjoint paths between the vertex
    sets ``sources`` and ``sinks``."""

    sources: frozenset[int]
    sinks: frozenset[int]
    requirement: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", frozenset(self.sources))
        object.__setattr__(self, "sinks", frozenset(self.sinks))
        if not self.sources or not self.sinks:
            raise ValueError("demand sides must be nonempty")
        if self.requirement < 1:
            raise ValueError(f"demand requirement must be >= 1, got {self.requirement}")

    @property
    def trivial(self) -> bool:
        """Overlapping sides are connected at every level by definition."""
        return bool(self.sources & self.sinks)


@dataclass(frozen=True)
class Instance:
    """Capacitated/costed undirected multigraph with group demands.

    ``edges[e] = (u, v, cost)``; self-loops are rejected, parallel edges are
    allowed and keep distinct ids.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    demands: tuple[DemandPair, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple((int(u), int(v), float(c)) for u, v, c in self.edges))
        object.__setattr__(self, "demands", tuple(self.demands))
        if self.n < 1:
            raise ValueError(f"vertex count must be >= 1, got {self.n}")
        for eid, (u, v, cost) in enumerate(self.edges):
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge {eid} endpoint out of range [0, {self.n})")
            if u == v:
                raise ValueError(f"edge {eid} is a self-loop at vertex {u}")
            if not math.isfinite(cost) or cost < 0:
                raise ValueError(f"edge {eid} has invalid cost {cost}")
        for i, dem in enumerate(self.demands):
            for v in dem.sources | dem.sinks:
                if not (0 <= v < self.n):
                    raise ValueError(f"demand {i} references invalid vertex {v}")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_cost(self, eid: int) -> float:
        return self.edges[eid][2]

    def total_cost(self, edge_ids: Iterable[int]) -> float:
        return sum(self.edges[e][2] for e in set(edge_ids))

    def max_requirement(self) -> int:
        if not self.demands:
            raise ValueError("instance has no demands")
        return max(d.requirement for d in self.demands)

    def has_uniform_requirements(self) -> bool:
        reqs = {d.requirement for d in self.demands}
        return len(reqs) <= 1


@dataclass(frozen=True)
class CapacityMap:
    """Per-edge non-negative capacities, indexed by edge id."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for eid, v in enumerate(self.values):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"capacity of edge {eid} is invalid: {v}")

    @classmethod
    def uniform(cls, instance: Instance, value: float) -> "CapacityMap":
        return cls((value,) * instance.num_edges)

    @classmethod
    def for_subset(cls, instance: Instance, edge_ids: Iterable[int], value: float = 1.0) -> "CapacityMap":
        sel = set(edge_ids)
        return cls(tuple(value if e in sel else 0.0 for e in range(instance.num_edges)))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, eid: int) -> float:
        return self.values[eid]

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class CutCertificate:
    """A vertex side, the edges crossing it, and their total capacity."""

    side: frozenset[int]
    crossing: frozenset[int]
    capacity: float


class UnionFind:
    """Disjoint-set forest with path compression and union by size."""

    __slots__ = ("parent", "size")

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> bool:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return False
        if self.size[ru] < self.size[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        self.size[ru] += self.size[rv]
        return True

    def connected(self, u: int, v: int) -> bool:
        return self.find(u) == self.find(v)


def _as_capacities(instance: Instance, capacities: CapacityMap | Sequence[float]) -> tuple[float, ...]:
    values = capacities.values if isinstance(capacities, CapacityMap) else tuple(float(v) for v in capacities)
    if len(values) != instance.num_edges:
        raise ValueError(f"capacity map has {len(values)} entries for {instance.num_edges} edges")
    for eid, v in enumerate(values):
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"capacity of edge {eid} is invalid: {v}")
    return values


def _check_vertices(instance: Instance, vertices: Iterable[int]) -> None:
    for v in vertices:
        if not (0 <= v < instance.n):
            raise ValueError(f"vertex {v} out of range [0, {instance.n})")


def max_flow(
    instance: Instance,
    capacities: CapacityMap | Sequence[float],
    sources: Iterable[int],
    sinks: Iterable[int],
) -> tuple[float, CutCertificate]:
    """Maximum flow between contracted vertex sets plus a certifying min cut.

    Undirected edges are modeled as an antiparallel residual-arc pair sharing
    one capacity budget, so an edge can carry its capacity in either
    direction.  The sets are contracted through super-terminals whose arcs
    carry more capacity than the whole graph, so the instance is never
    mutated.  Returns ``(value, certificate)`` with
    ``abs(value - certificate.capacity) <= FLOW_TOL``.
    """
    src = frozenset(sources)
    snk = frozenset(sinks)
    if not src or not snk:
        raise ValueError("source and sink sets must be nonempty")
    if src & snk:
        raise ValueError(f"source and sink sets overlap: {sorted(src & snk)}")
    _check_vertices(instance, src | snk)
    caps = _as_capacities(instance, capacities)

    n = instance.n
    s_node, t_node = n, n + 1
    num_nodes = n + 2
    head: list[list[int]] = [[] for _ in range(num_nodes)]
    arc_to: list[int] = []
    arc_cap: list[float] = []

    def add_arc(u: int, v: int, cap_uv: float, cap_vu: float) -> None:
        head[u].append(len(arc_to))
        arc_to.append(v)
        arc_cap.append(cap_uv)
        head[v].append(len(arc_to))
        arc_to.append(u)
        arc_cap.append(cap_vu)

    total = 0.0
    for eid, (u, v, _cost) in enumerate(instance.edges):
        c = caps[eid]
        if c > 0.0:
            add_arc(u, v, c, c)
            total += c
    inf_cap = total + 1.0
    for s in sorted(src):
        add_arc(s_node, s, inf_cap, 0.0)
    for t in sorted(snk):
        add_arc(t, t_node, inf_cap, 0.0)

    level = [-1] * num_nodes
    iter_idx = [0] * num_nodes

    def bfs() -> bool:
        for i in range(num_nodes):
            level[i] = -1
        level[s_node] = 0
        queue = deque([s_node])
        while queue:
            u = queue.popleft()
            for aid in head[u]:
                w = arc_to[aid]
                if arc_cap[aid] > _RESIDUAL_EPS and level[w] < 0:
                    level[w] = level[u] + 1
                    queue.append(w)
        return level[t_node] >= 0

    def dfs(u: int, pushed: float) -> float:
        if u == t_node:
            return pushed
        while iter_idx[u] < len(head[u]):
            aid = head[u][iter_idx[u]]
            w = arc_to[aid]
            if arc_cap[aid] > _RESIDUAL_EPS and level[w] == level[u] + 1:
                got = dfs(w, min(pushed, arc_cap[aid]))
                if got > _RESIDUAL_EPS:
                    arc_cap[aid] -= got
                    arc_cap[aid ^ 1] += got
                    return got
            iter_idx[u] += 1
        return 0.0

    value = 0.0
    while bfs():
        for i in range(num_nodes):
            iter_idx[i] = 0
        while True:
            pushed = dfs(s_node, math.inf)
            if pushed <= _RESIDUAL_EPS:
                break
            value += pushed

    # The final failed BFS labels exactly the residual-reachable nodes.
    side = frozenset(v for v in range(n) if level[v] >= 0)
    crossing = frozenset(
        eid for eid, (u, v, _cost) in enumerate(instance.edges) if (u in side) != (v in side)
    )
    cut_capacity = sum(caps[e] for e in sorted(crossing))
    assert abs(value - cut_capacity) <= FLOW_TOL * max(1.0, cut_capacity), (
        f"flow/cut mismatch: {value} vs {cut_capacity}"
    )
    return value, CutCertificate(side=side, crossing=crossing, capacity=cut_capacity)


def connected_components(instance: Instance, edge_ids: Iterable[int]) -> list[frozenset[int]]:
    """Vertex partition into components of the subgraph on ``edge_ids``.

    Components are ordered by their smallest vertex id.
    """
    subset = set(edge_ids)
    for e in subset:
        if not (0 <= e < instance.num_edges):
            raise ValueError(f"edge id {e} out of range")
    uf = UnionFind(instance.n)
    for e in sorted(subset):
        u, v, _ = instance.edges[e]
        uf.union(u, v)
    groups: dict[int, list[int]] = {}
    for v in range(instance.n):
        groups.setdefault(uf.find(v), []).append(v)
    comps = [frozenset(members) for members in groups.values()]
    comps.sort(key=min)
    return comps


def set_pair_edge_connectivity(
    instance: Instance,
    edge_ids: Iterable[int],
    sources: Iterable[int],
    sinks: Iterable[int],
) -> int | float:
    """Number of edge-disjoint paths between two vertex sets in a subgraph.

    Computed as integral max-flow with unit capacity on the subgraph edges.
    Overlapping sets are connected at every level, so ``math.inf`` is
    returned for them.
    """
    src = frozenset(sources)
    snk = frozenset(sinks)
    _check_vertices(instance, src | snk)
    if not src or not snk:
        raise ValueError("source and sink sets must be nonempty")
    if src & snk:
        return math.inf
    caps = CapacityMap.for_subset(instance, edge_ids)
    value, _cut = max_flow(instance, caps, src, snk)
    return int(round(value))


def reduce_to_uniform(instance: Instance) -> tuple[Instance, tuple[int, ...]]:
    """Make all demand requirements equal to the instance maximum.

    Appends ``k`` zero-cost auxiliary edges on ``2k`` fresh vertices; a demand
    short of the maximum by ``d`` absorbs the first ``d`` auxiliary endpoints
    into its sides, gaining that many free disjoint paths.  Feasible solutions
    (which always include the free auxiliary edges) correspond one-to-one
    between the two instances at equal cost.

    Returns the new instance and the auxiliary edge ids.
    """
    if not instance.demands:
        raise ValueError("instance has no demands")
    k = instance.max_requirement()
    n = instance.n
    new_n = n + 2 * k
    aux_edges = [(n + j, n + k + j, 0.0) for j in range(k)]
    new_edges = instance.edges + tuple(aux_edges)
    aux_ids = tuple(range(instance.num_edges, instance.num_edges + k))
    new_demands = []
    for dem in instance.demands:
        deficit = k - dem.requirement
        sources = set(dem.sources)
        sinks = set(dem.sinks)
        for j in range(deficit):
            sources.add(n + j)
            sinks.add(n + k + j)
        new_demands.append(DemandPair(frozenset(sources), frozenset(sinks), k))
    reduced = Instance(n=new_n, edges=new_edges, demands=tuple(new_demands))
    return reduced, aux_ids
