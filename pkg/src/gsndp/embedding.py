"""Capacity capping and a hierarchical capacity-based tree embedding.

The embedding contract: a rooted tree whose leaves are in bijection with the
graph vertices, every tree edge carrying exactly the capacity of the graph
cut induced by the leaves below it, every tree edge mapped to a graph walk
between cluster representatives.  Exact cut capacities make flow domination
(tree flow >= graph flow for every disjoint set pair) a structural fact, so
congestion is the only quality measure, and it is measured rather than
proven: a multiplicative-weights loop builds several trees, steering later
trees away from edges the earlier ones overloaded, and the resulting
distribution reports its own expected relative load.

Construction is deterministic given the instance, capacities and weights.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import CapacityMap, Instance, UnionFind

#: Clusters up to this size are bipartitioned by exact enumeration.
EXACT_SPLIT_LIMIT = 12

#: Minimum fraction of a cluster on each side of a heuristic bipartition.
BALANCE_FLOOR = 0.25


@dataclass(frozen=True)
class EmbeddingConfig:
    """Knobs for distribution building; defaults follow the solver pipeline."""

    num_trees: int | None = None
    epsilon_mwu: float = 0.5
    height_constant: float = 4.0

    def resolved_num_trees(self, n: int) -> int:
        if self.num_trees is not None:
            return self.num_trees
        return max(1, math.ceil(8 * math.log2(max(2, n))))


@dataclass(frozen=True)
class CappedCapacities:
    """LP values turned into embedding capacities.

    Edges at or above ``large_threshold = 1/(4*level*beta)`` are capped to
    exactly that threshold; edges below ``tiny_threshold``, a ``1/(2n^2)``
    fraction of it, are zeroed to keep the capacity ratio (and therefore tree
    height) bounded; everything else keeps its LP value.
    """

    values: CapacityMap
    level: int
    beta: float
    large: frozenset[int]
    small: frozenset[int]
    zeroed: frozenset[int]
    large_threshold: float
    tiny_threshold: float


def cap_capacities(
    solution: Sequence[float], level: int, beta: float, n: int
) -> CappedCapacities:
    """Apply the large-edge cap and tiny-edge cutoff to LP values."""
    xs = getattr(solution, "values", solution)
    if level < 1:
        raise ValueError("capping level must be >= 1")
    if beta < 1:
        raise ValueError("congestion parameter must be >= 1")
    large_threshold = 1.0 / (4.0 * level * beta)
    tiny_threshold = large_threshold / (2.0 * n * n)
    values = []
    large: set[int] = set()
    small: set[int] = set()
    zeroed: set[int] = set()
    for e, x in enumerate(xs):
        if x >= large_threshold:
            large.add(e)
            values.append(large_threshold)
        elif x < tiny_threshold:
            zeroed.add(e)
            values.append(0.0)
        else:
            small.add(e)
            values.append(float(x))
    return CappedCapacities(
        values=CapacityMap(tuple(values)),
        level=level,
        beta=float(beta),
        large=frozenset(large),
        small=frozenset(small),
        zeroed=frozenset(zeroed),
        large_threshold=large_threshold,
        tiny_threshold=tiny_threshold,
    )


class TreeEmbedding:
    """A rooted decomposition tree over a capacitated graph.

    Node 0 is the root.  ``parent[i]`` is -1 for the root; the tree edge into
    node ``i`` carries ``edge_capacity[i]`` and maps to the graph walk
    ``edge_path[i]`` (edge ids) between the parent's and the node's
    representatives.
    """

    __slots__ = (
        "num_vertices",
        "num_nodes",
        "parent",
        "children",
        "rep",
        "depth",
        "leaves_below",
        "edge_capacity",
        "edge_path",
        "leaf_of_vertex",
        "vertex_of_leaf",
        "height",
        "_preimage_index",
    )

    def __init__(
        self,
        num_vertices: int,
        parent: Sequence[int],
        rep: Sequence[int],
        leaves_below: Sequence[frozenset[int]],
        edge_capacity: Sequence[float],
        edge_path: Sequence[tuple[int, ...]],
    ) -> None:
        self.num_vertices = num_vertices
        self.num_nodes = len(parent)
        self.parent = tuple(parent)
        self.rep = tuple(rep)
        self.leaves_below = tuple(leaves_below)
        self.edge_capacity = tuple(edge_capacity)
        self.edge_path = tuple(edge_path)
        children: list[list[int]] = [[] for _ in range(self.num_nodes)]
        depth = [0] * self.num_nodes
        for i in range(1, self.num_nodes):
            children[self.parent[i]].append(i)
            depth[i] = depth[self.parent[i]] + 1
        self.children = tuple(tuple(c) for c in children)
        self.depth = tuple(depth)
        self.height = max(depth) if depth else 0
        leaf_of_vertex = [-1] * num_vertices
        vertex_of_leaf = [-1] * self.num_nodes
        for i in range(self.num_nodes):
            if not children[i]:
                members = self.leaves_below[i]
                if len(members) != 1:
                    raise ValueError(f"leaf node {i} covers {len(members)} vertices")
                (v,) = members
                if leaf_of_vertex[v] != -1:
                    raise ValueError(f"vertex {v} appears under two leaves")
                leaf_of_vertex[v] = i
                vertex_of_leaf[i] = v
        missing = [v for v in range(num_vertices) if leaf_of_vertex[v] == -1]
        if missing:
            raise ValueError(f"vertices without a leaf: {missing}")
        self.leaf_of_vertex = tuple(leaf_of_vertex)
        self.vertex_of_leaf = tuple(vertex_of_leaf)
        self._preimage_index: dict[int, tuple[int, ...]] | None = None

    def tree_edges(self) -> range:
        """Tree edges identified by their lower (child) node id."""
        return range(1, self.num_nodes)

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def leaf_nodes(self, vertices: Iterable[int]) -> frozenset[int]:
        return frozenset(self.leaf_of_vertex[v] for v in vertices)

    def subtree_nodes(self, node: int) -> list[int]:
        """Preorder node list of the subtree rooted at ``node``."""
        out = []
        stack = [node]
        while stack:
            u = stack.pop()
            out.append(u)
            for c in reversed(self.children[u]):
                stack.append(c)
        return out

    def _build_preimage_index(self) -> dict[int, tuple[int, ...]]:
        if self._preimage_index is None:
            table: dict[int, list[int]] = {}
            for t in self.tree_edges():
                for e in self.edge_path[t]:
                    table.setdefault(e, []).append(t)
            self._preimage_index = {e: tuple(sorted(ts)) for e, ts in table.items()}
        return self._preimage_index

    def preimage(self, edge_ids: Iterable[int]) -> frozenset[int]:
        """Tree edges whose mapped walk uses any of the given graph edges."""
        index = self._build_preimage_index()
        out: set[int] = set()
        for e in edge_ids:
            out.update(index.get(e, ()))
        return frozenset(out)

    def as_flow_instance(
        self, removed_tree_edges: Iterable[int] = ()
    ) -> tuple[Instance, CapacityMap]:
        """The tree as a flow network over its nodes (optionally minus edges)."""
        removed = set(removed_tree_edges)
        edges = []
        caps = []
        for t in self.tree_edges():
            edges.append((self.parent[t], t, 0.0))
            caps.append(0.0 if t in removed else self.edge_capacity[t])
        inst = Instance(n=self.num_nodes, edges=tuple(edges), demands=())
        return inst, CapacityMap(tuple(caps))

    def to_dot(self) -> str:
        """GraphViz rendering: leaves labeled by vertex, edges by capacity."""
        lines = ["graph decomposition_tree {"]
        for i in range(self.num_nodes):
            if self.is_leaf(i):
                lines.append(f'  n{i} [shape=box, label="v{self.vertex_of_leaf[i]}"];')
            else:
                lines.append(f'  n{i} [label="rep={self.rep[i]}"];')
        for t in self.tree_edges():
            lines.append(f'  n{self.parent[t]} -- n{t} [label="{self.edge_capacity[t]:.6g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TreeDistribution:
    """Finite weighted set of embeddings with measured congestion."""

    trees: tuple[TreeEmbedding, ...]
    weights: tuple[float, ...]
    beta_measured: float
    expected_rload: tuple[float, ...]


def _positive_adjacency(instance: Instance, caps: Sequence[float]) -> list[list[tuple[int, int]]]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(instance.n)]
    for eid, (u, v, _c) in enumerate(instance.edges):
        if caps[eid] > 0.0:
            adj[u].append((v, eid))
            adj[v].append((u, eid))
    for lst in adj:
        lst.sort()
    return adj


def _components_under(vertices: Iterable[int], adj: Sequence[Sequence[tuple[int, int]]]) -> list[list[int]]:
    """Connected components of the positive subgraph induced on ``vertices``."""
    allowed = set(vertices)
    seen: set[int] = set()
    comps: list[list[int]] = []
    for start in sorted(allowed):
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        queue = [start]
        while queue:
            u = queue.pop()
            for w, _e in adj[u]:
                if w in allowed and w not in seen:
                    seen.add(w)
                    comp.append(w)
                    queue.append(w)
        comps.append(sorted(comp))
    return comps


def _capacity_ratio(caps: Sequence[float]) -> float:
    positives = [c for c in caps if c > 0.0]
    if not positives:
        return 1.0
    return max(positives) / min(positives)


def height_cap(n: int, caps: Sequence[float], height_constant: float = 4.0) -> int:
    """Height budget ``ceil(c_h * log2(n * C))`` from the capacity ratio."""
    ratio = _capacity_ratio(caps)
    return math.ceil(height_constant * math.log2(max(2.0, n * ratio)))


class _TreeBuilder:
    def __init__(
        self,
        instance: Instance,
        caps: tuple[float, ...],
        weights: tuple[float, ...],
        budget: int,
    ) -> None:
        self.instance = instance
        self.caps = caps
        self.weights = weights
        self.budget = budget
        self.adj = _positive_adjacency(instance, caps)
        self.parent: list[int] = []
        self.rep: list[int] = []
        self.leaves_below: list[frozenset[int]] = []
        self.edge_capacity: list[float] = []
        self.edge_path: list[tuple[int, ...]] = []

    # -- node bookkeeping -------------------------------------------------
    def _new_node(
        self,
        cluster: Sequence[int],
        rep: int,
        parent: int,
        parent_cluster: Sequence[int] | None,
        zero_edge: bool,
    ) -> int:
        node = len(self.parent)
        self.parent.append(parent)
        self.rep.append(rep)
        self.leaves_below.append(frozenset(cluster))
        if parent < 0:
            self.edge_capacity.append(0.0)
            self.edge_path.append(())
        else:
            cut = self._cut_capacity(cluster)
            self.edge_capacity.append(cut)
            if zero_edge or self.rep[parent] == rep:
                self.edge_path.append(())
            else:
                self.edge_path.append(self._walk(parent_cluster, self.rep[parent], rep))
        return node

    def _cut_capacity(self, cluster: Sequence[int]) -> float:
        inside = set(cluster)
        total = 0.0
        for eid, (u, v, _c) in enumerate(self.instance.edges):
            if (u in inside) != (v in inside):
                total += self.caps[eid]
        return total

    def _walk(self, within: Sequence[int] | None, source: int, target: int) -> tuple[int, ...]:
        """Deterministic shortest walk under length w_e / capacity_e."""
        allowed = set(within) if within is not None else None
        dist = {source: 0.0}
        prev: dict[int, tuple[int, int]] = {}
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == target:
                break
            if d > dist.get(u, math.inf):
                continue
            for w, eid in self.adj[u]:
                if allowed is not None and w not in allowed:
                    continue
                nd = d + self.weights[eid] / self.caps[eid]
                if nd < dist.get(w, math.inf) - 1e-15:
                    dist[w] = nd
                    prev[w] = (u, eid)
                    heapq.heappush(heap, (nd, w))
        if target not in prev and target != source:
            raise AssertionError(f"representatives {source} and {target} not connected in cluster")
        path: list[int] = []
        v = target
        while v != source:
            u, eid = prev[v]
            path.append(eid)
            v = u
        path.reverse()
        return tuple(path)

    # -- representatives ---------------------------------------------------
    def _select_rep(self, cluster: Sequence[int]) -> int:
        inside = set(cluster)
        best_v = cluster[0]
        best_cap = -1.0
        for v in sorted(cluster):
            cap = 0.0
            for w, eid in self.adj[v]:
                if w in inside:
                    cap += self.caps[eid]
            if cap > best_cap + 1e-15:
                best_cap = cap
                best_v = v
        return best_v

    def global_rep(self) -> int:
        incident = [0.0] * self.instance.n
        for eid, (u, v, _c) in enumerate(self.instance.edges):
            incident[u] += self.caps[eid]
            incident[v] += self.caps[eid]
        best = max(range(self.instance.n), key=lambda v: (incident[v], -v))
        return best

    # -- splitting ---------------------------------------------------------
    def _internal_edges(self, cluster: Sequence[int]) -> list[tuple[int, int, int, float]]:
        inside = set(cluster)
        out = []
        for eid, (u, v, _c) in enumerate(self.instance.edges):
            if self.caps[eid] > 0.0 and u in inside and v in inside:
                out.append((eid, u, v, self.caps[eid]))
        return out

    def _tree_children_of(self, cluster: Sequence[int], root: int) -> tuple[dict[int, list[int]], dict[int, int]]:
        """BFS tree of an acyclic cluster from ``root``: children and depths."""
        inside = set(cluster)
        depth = {root: 0}
        children: dict[int, list[int]] = {v: [] for v in cluster}
        queue = [root]
        while queue:
            u = queue.pop(0)
            for w, _e in self.adj[u]:
                if w in inside and w not in depth:
                    depth[w] = depth[u] + 1
                    children[u].append(w)
                    queue.append(w)
        return children, depth

    def build_cluster(
        self,
        cluster: Sequence[int],
        rep_hint: int | None,
        parent: int,
        parent_cluster: Sequence[int] | None,
        depth: int,
        zero_edge: bool = False,
    ) -> int:
        cluster = sorted(cluster)
        rep = rep_hint if rep_hint is not None else self._select_rep(cluster)
        node = self._new_node(cluster, rep, parent, parent_cluster, zero_edge)
        if len(cluster) == 1:
            return node

        internal = self._internal_edges(cluster)
        if len(internal) == len(cluster) - 1:
            # The cluster's positive subgraph is a tree: peel it exactly so a
            # tree-shaped input reproduces itself (unit relative load), as
            # long as its depth fits the height budget.
            children, node_depth = self._tree_children_of(cluster, rep)
            reach = max(node_depth.values())
            if depth + 1 + reach <= self.budget:
                self.build_cluster([rep], rep, node, cluster, depth + 1)
                for w in sorted(children[rep]):
                    sub = self._subtree_vertices(children, w)
                    self.build_cluster(sub, w, node, cluster, depth + 1)
                return node

        side_a, side_b = self._bipartition(cluster, internal)
        parts = _components_under(side_a, self.adj) + _components_under(side_b, self.adj)
        parts.sort(key=lambda comp: comp[0])
        for comp in parts:
            self.build_cluster(comp, None, node, cluster, depth + 1)
        return node

    def _subtree_vertices(self, children: dict[int, list[int]], root: int) -> list[int]:
        out = [root]
        stack = [root]
        while stack:
            u = stack.pop()
            for w in children[u]:
                out.append(w)
                stack.append(w)
        return sorted(out)

    def _bipartition(
        self, cluster: Sequence[int], internal: Sequence[tuple[int, int, int, float]]
    ) -> tuple[list[int], list[int]]:
        if len(cluster) <= EXACT_SPLIT_LIMIT:
            return self._exact_bipartition(cluster, internal)
        return self._spectral_bipartition(cluster, internal)

    def _exact_bipartition(
        self, cluster: Sequence[int], internal: Sequence[tuple[int, int, int, float]]
    ) -> tuple[list[int], list[int]]:
        """Minimum-expansion bipartition by enumeration (vertex 0 pinned)."""
        nc = len(cluster)
        idx = {v: i for i, v in enumerate(cluster)}
        masks = np.arange(1, 1 << (nc - 1), dtype=np.uint32)
        cut = np.zeros(len(masks))
        for _eid, u, v, c in internal:
            iu, iv = idx[u], idx[v]
            su = np.zeros(len(masks), dtype=np.uint32) if iu == 0 else (masks >> np.uint32(iu - 1)) & 1
            sv = np.zeros(len(masks), dtype=np.uint32) if iv == 0 else (masks >> np.uint32(iv - 1)) & 1
            cut += c * (su != sv)
        size_b = np.bitwise_count(masks).astype(np.int64)
        min_side = np.minimum(size_b, nc - size_b)
        expansion = cut / min_side
        order = np.lexsort((masks, -min_side, expansion))
        best = int(masks[order[0]])
        side_b = [cluster[i] for i in range(1, nc) if (best >> (i - 1)) & 1]
        side_a = [v for v in cluster if v not in set(side_b)]
        return side_a, side_b

    def _spectral_bipartition(
        self, cluster: Sequence[int], internal: Sequence[tuple[int, int, int, float]]
    ) -> tuple[list[int], list[int]]:
        """Fiedler-vector sweep with a balance floor and local moves."""
        nc = len(cluster)
        idx = {v: i for i, v in enumerate(cluster)}
        w_mat = np.zeros((nc, nc))
        for _eid, u, v, c in internal:
            iu, iv = idx[u], idx[v]
            w_mat[iu, iv] += c
            w_mat[iv, iu] += c
        deg = w_mat.sum(axis=1)
        dinv = 1.0 / np.sqrt(deg)
        lap = np.eye(nc) - dinv[:, None] * w_mat * dinv[None, :]
        _vals, vecs = np.linalg.eigh(lap)
        fiedler = vecs[:, 1]
        pivot = int(np.argmax(np.abs(fiedler)))
        if fiedler[pivot] < 0:
            fiedler = -fiedler
        order = sorted(range(nc), key=lambda i: (fiedler[i], cluster[i]))

        lo = max(1, math.ceil(nc * BALANCE_FLOOR))
        hi = nc - lo
        in_a = [False] * nc
        cut_w = 0.0
        best: tuple[float, int, int] | None = None
        for pos, i in enumerate(order[:-1]):
            for j in range(nc):
                if w_mat[i, j]:
                    cut_w += -w_mat[i, j] if in_a[j] else w_mat[i, j]
            in_a[i] = True
            s = pos + 1
            if lo <= s <= hi:
                exp = cut_w / min(s, nc - s)
                cand = (exp, -min(s, nc - s), s)
                if best is None or cand < best:
                    best = cand
        assert best is not None
        split = best[2]
        in_a = [False] * nc
        for i in order[:split]:
            in_a[i] = True
        size_a = split
        cut_w = sum(
            w_mat[i, j] for i in range(nc) for j in range(i + 1, nc) if w_mat[i, j] and in_a[i] != in_a[j]
        )

        for _ in range(20):
            moved = False
            for i in range(nc):
                new_a = size_a - 1 if in_a[i] else size_a + 1
                if not (lo <= new_a <= hi):
                    continue
                delta = 0.0
                for j in range(nc):
                    if w_mat[i, j]:
                        delta += w_mat[i, j] if in_a[j] == in_a[i] else -w_mat[i, j]
                new_cut = cut_w + delta
                if new_cut / min(new_a, nc - new_a) < cut_w / min(size_a, nc - size_a) - 1e-12:
                    in_a[i] = not in_a[i]
                    size_a = new_a
                    cut_w = new_cut
                    moved = True
            if not moved:
                break

        side_a = [cluster[i] for i in range(nc) if in_a[i]]
        side_b = [cluster[i] for i in range(nc) if not in_a[i]]
        return side_a, side_b


def build_decomposition_tree(
    instance: Instance,
    capacities: CapacityMap | Sequence[float],
    weights: Sequence[float] | None = None,
    height_constant: float = 4.0,
) -> TreeEmbedding:
    """Build one decomposition tree for ``(instance, capacities)``.

    Clusters are recursively split into connected sub-clusters (exact
    minimum-expansion enumeration for small clusters, a Fiedler sweep with
    local refinement above that); disconnected graphs hang one child per
    component under an artificial root through zero-capacity edges.
    """
    caps = capacities.values if isinstance(capacities, CapacityMap) else tuple(float(c) for c in capacities)
    if len(caps) != instance.num_edges:
        raise ValueError("capacity map length mismatch")
    if weights is None:
        weights = (1.0,) * instance.num_edges
    else:
        weights = tuple(float(w) for w in weights)
        if any(w <= 0 for w in weights):
            raise ValueError("edge weights must be positive")

    budget = height_cap(instance.n, caps, height_constant)
    builder = _TreeBuilder(instance, caps, weights, budget)
    islands = _components_under(range(instance.n), builder.adj)
    if len(islands) == 1:
        builder.build_cluster(islands[0], None, -1, None, 0)
    else:
        root = builder._new_node(sorted(range(instance.n)), builder.global_rep(), -1, None, False)
        for comp in islands:
            builder.build_cluster(comp, None, root, None, 1, zero_edge=True)
    return TreeEmbedding(
        num_vertices=instance.n,
        parent=builder.parent,
        rep=builder.rep,
        leaves_below=builder.leaves_below,
        edge_capacity=builder.edge_capacity,
        edge_path=builder.edge_path,
    )


def edge_loads(embedding: TreeEmbedding, num_edges: int) -> list[float]:
    """Per graph edge: total capacity of tree edges mapping through it."""
    loads = [0.0] * num_edges
    for t in embedding.tree_edges():
        y = embedding.edge_capacity[t]
        for e in embedding.edge_path[t]:
            loads[e] += y
    return loads


def measure_congestion(
    distribution: TreeDistribution, capacities: CapacityMap | Sequence[float]
) -> tuple[float, tuple[float, ...]]:
    """Recompute the expected relative load table and its maximum from scratch.

    Zero-capacity edges never appear on any mapped walk, so their relative
    load is defined as 0 and excluded from the maximum.
    """
    caps = capacities.values if isinstance(capacities, CapacityMap) else tuple(float(c) for c in capacities)
    m = len(caps)
    expected = [0.0] * m
    for tree, weight in zip(distribution.trees, distribution.weights):
        loads = edge_loads(tree, m)
        for e in range(m):
            if caps[e] > 0.0:
                expected[e] += weight * loads[e] / caps[e]
    beta = max(expected, default=0.0)
    return beta, tuple(expected)


def build_distribution(
    instance: Instance,
    capacities: CapacityMap | Sequence[float],
    num_trees: int,
    epsilon_mwu: float = 0.5,
    rng: np.random.Generator | None = None,
    height_constant: float = 4.0,
) -> TreeDistribution:
    """Multiplicative-weights loop over decomposition trees, uniform weights.

    After each tree the per-edge relative load reweights the path lengths
    (``w_e *= exp(eps * rload_e / max_rload)``) so later trees route around
    congested edges.  The construction is deterministic; ``rng`` is accepted
    for interface stability and unused.
    """
    if num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    if not (0.0 < epsilon_mwu < 1.0):
        raise ValueError("epsilon_mwu must lie in (0, 1)")
    caps = capacities.values if isinstance(capacities, CapacityMap) else tuple(float(c) for c in capacities)
    m = instance.num_edges
    weights = [1.0] * m
    trees = []
    for _ in range(num_trees):
        tree = build_decomposition_tree(instance, caps, weights, height_constant)
        trees.append(tree)
        loads = edge_loads(tree, m)
        rloads = [loads[e] / caps[e] if caps[e] > 0 else 0.0 for e in range(m)]
        max_rload = max(rloads, default=0.0)
        if max_rload > 0:
            for e in range(m):
                weights[e] *= math.exp(epsilon_mwu * rloads[e] / max_rload)
    tree_weights = (1.0 / num_trees,) * num_trees
    dist = TreeDistribution(
        trees=tuple(trees), weights=tree_weights, beta_measured=0.0, expected_rload=()
    )
    beta, table = measure_congestion(dist, caps)
    return TreeDistribution(
        trees=tuple(trees), weights=tree_weights, beta_measured=beta, expected_rload=table
    )


@dataclass(frozen=True)
class FixPointResult:
    """Outcome of the capping/embedding fixed-point loop."""

    beta: float
    capped: CappedCapacities
    distribution: TreeDistribution
    converged: bool
    iterations: int
    history: tuple[float, ...]


def fix_point_beta(
    instance: Instance,
    solution: Sequence[float],
    level: int,
    beta0: float | None = None,
    max_iters: int = 5,
    config: EmbeddingConfig | None = None,
    rng: np.random.Generator | None = None,
) -> FixPointResult:
    """Iterate capping and embedding until the measured congestion fits.

    Start from ``beta0`` (default ``max(1, ceil(log2 n))``); cap with the
    current beta, build a distribution, and measure.  Stop when the measured
    congestion does not exceed the beta used for capping, else round it up
    and repeat; the result flags non-convergence when the iteration limit is
    hit.
    """
    cfg = config or EmbeddingConfig()
    n = instance.n
    beta = float(beta0) if beta0 is not None else float(max(1, math.ceil(math.log2(max(2, n)))))
    if beta < 1:
        raise ValueError("beta0 must be >= 1")
    num_trees = cfg.resolved_num_trees(n)
    history: list[float] = []
    capped = None
    dist = None
    for iteration in range(1, max_iters + 1):
        capped = cap_capacities(solution, level, beta, n)
        dist = build_distribution(
            instance, capped.values, num_trees, cfg.epsilon_mwu, rng, cfg.height_constant
        )
        history.append(dist.beta_measured)
        if dist.beta_measured <= beta + 1e-9:
            return FixPointResult(beta, capped, dist, True, iteration, tuple(history))
        beta = float(math.ceil(dist.beta_measured))
    assert capped is not None and dist is not None
    return FixPointResult(beta, capped, dist, False, max_iters, tuple(history))


def check_structure(
    instance: Instance,
    capacities: CapacityMap | Sequence[float],
    embedding: TreeEmbedding,
    height_constant: float = 4.0,
) -> list[str]:
    """Audit the embedding contract; returns human-readable violations.

    Checks the leaf bijection, exact cut capacities, walk validity and the
    height budget.  An empty list means the embedding is structurally sound.
    """
    caps = capacities.values if isinstance(capacities, CapacityMap) else tuple(float(c) for c in capacities)
    problems: list[str] = []

    seen = set()
    for v in range(instance.n):
        leaf = embedding.leaf_of_vertex[v]
        if embedding.vertex_of_leaf[leaf] != v:
            problems.append(f"leaf bijection broken at vertex {v}")
        seen.add(leaf)
    for i in range(embedding.num_nodes):
        if embedding.is_leaf(i) and i not in seen:
            problems.append(f"leaf node {i} not mapped to any vertex")

    for t in embedding.tree_edges():
        below = embedding.leaves_below[t]
        cut = 0.0
        for eid, (u, v, _c) in enumerate(instance.edges):
            if (u in below) != (v in below):
                cut += caps[eid]
        if abs(cut - embedding.edge_capacity[t]) > 1e-12:
            problems.append(
                f"tree edge {t}: stored capacity {embedding.edge_capacity[t]!r} != recomputed {cut!r}"
            )

    for t in embedding.tree_edges():
        path = embedding.edge_path[t]
        a = embedding.rep[embedding.parent[t]]
        b = embedding.rep[t]
        if not path:
            if a != b and embedding.edge_capacity[t] > 1e-12:
                problems.append(f"tree edge {t}: empty walk between distinct reps with capacity")
            continue
        pos = a
        for eid in path:
            u, v, _c = instance.edges[eid]
            if caps[eid] <= 0.0:
                problems.append(f"tree edge {t}: walk uses zero-capacity edge {eid}")
            if pos == u:
                pos = v
            elif pos == v:
                pos = u
            else:
                problems.append(f"tree edge {t}: walk not contiguous at edge {eid}")
                break
        if pos != b:
            problems.append(f"tree edge {t}: walk ends at {pos}, expected {b}")

    cap_bound = height_cap(instance.n, caps, height_constant)
    if embedding.height > cap_bound:
        problems.append(f"height {embedding.height} exceeds cap {cap_bound}")
    return problems


def rload_table_csv(instance: Instance, distribution: TreeDistribution) -> str:
    """CSV dump of the per-edge expected relative load table."""
    lines = ["edge,u,v,expected_rload"]
    for e, (u, v, _c) in enumerate(instance.edges):
        lines.append(f"{e},{u},{v},{distribution.expected_rload[e]:.9g}")
    return "\n".join(lines) + "\n"
