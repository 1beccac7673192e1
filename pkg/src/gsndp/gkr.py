"""Dependent randomized rounding on rooted trees.

A rooted tree with edge capacities in [0, 1] is sampled top-down: an edge
under the root is kept with probability equal to its capacity, a deeper edge
with probability capacity / parent-capacity given the parent was kept.  The
kept edges always form a connected subtree containing the root, and every
edge's marginal inclusion probability telescopes back to exactly its
capacity.

:func:`exact_connect_probability` is the testing oracle: a bottom-up product
DP giving the exact probability that at least one leaf of a target group ends
up connected to the root.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .embedding import TreeEmbedding


class RoundingTree:
    """A rooted tree view with top-down clipped working capacities.

    Nodes are listed in preorder (parent index always below child index);
    node 0 is the root and carries a virtual capacity of 1.  The working
    capacity of the edge above node ``i`` is
    ``min(1, scale * raw_i, capacity(parent))``, so capacities never increase
    along a root-to-leaf path even after scaling.
    """

    __slots__ = ("num_nodes", "parent", "children", "capacity", "source_node")

    def __init__(
        self,
        parents: Sequence[int],
        raw_capacities: Sequence[float],
        scale: float = 1.0,
        source_nodes: Sequence[int] | None = None,
    ) -> None:
        if not parents or parents[0] != -1:
            raise ValueError("node 0 must be the root (parent -1)")
        self.num_nodes = len(parents)
        self.parent = tuple(parents)
        capacity = [1.0]
        for i in range(1, self.num_nodes):
            p = self.parent[i]
            if not (0 <= p < i):
                raise ValueError(f"node {i} must appear after its parent, got parent {p}")
            c = min(1.0, scale * raw_capacities[i], capacity[p])
            capacity.append(max(0.0, c))
        self.capacity = tuple(capacity)
        children: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i in range(1, self.num_nodes):
            children[self.parent[i]].append(i)
        self.children = tuple(tuple(c) for c in children)
        self.source_node = tuple(source_nodes) if source_nodes is not None else tuple(range(self.num_nodes))

    @classmethod
    def from_embedding(cls, embedding: TreeEmbedding, root: int, scale: float = 1.0) -> "RoundingTree":
        """View of the embedding subtree rooted at ``root`` with scaled capacities."""
        nodes = embedding.subtree_nodes(root)
        index = {node: i for i, node in enumerate(nodes)}
        parents = [-1] + [index[embedding.parent[node]] for node in nodes[1:]]
        raw = [0.0] + [embedding.edge_capacity[node] for node in nodes[1:]]
        return cls(parents, raw, scale=scale, source_nodes=nodes)

    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.num_nodes) if not self.children[i])

    def leaf_views_for_vertices(self, embedding: TreeEmbedding, vertices: Iterable[int]) -> frozenset[int]:
        """View ids of the embedding leaves of the given graph vertices."""
        index = {node: i for i, node in enumerate(self.source_node)}
        out = set()
        for v in vertices:
            leaf = embedding.leaf_of_vertex[v]
            if leaf in index:
                out.add(index[leaf])
        return frozenset(out)


def round_gkr(tree: RoundingTree, rng: np.random.Generator) -> frozenset[int]:
    """One top-down dependent sample; returns kept edges by child-node id.

    A root-incident edge is kept with probability equal to its working
    capacity; a deeper edge with the ratio of its capacity to its parent's,
    given the parent was kept (0 when the parent capacity is 0).  Subtrees
    under dropped edges are skipped entirely.
    """
    included = [False] * tree.num_nodes
    included[0] = True
    kept: list[int] = []
    for i in range(1, tree.num_nodes):
        p = tree.parent[i]
        if not included[p]:
            continue
        parent_cap = tree.capacity[p]
        if parent_cap <= 0.0:
            continue
        ratio = tree.capacity[i] / parent_cap
        if rng.random() < ratio:
            included[i] = True
            kept.append(i)
    if __debug__:
        for i in kept:
            assert included[tree.parent[i]], "kept edge with dropped parent"
    return frozenset(kept)


def exact_connect_probability(tree: RoundingTree, group: Iterable[int]) -> float:
    """Exact probability that some group leaf is connected to the root.

    Bottom-up DP: for each node, the probability that no group leaf below it
    reaches it (given its own edge was kept) multiplies independently over
    children with their conditional inclusion probabilities.
    """
    members = frozenset(group)
    if not members:
        raise ValueError("group must be nonempty")
    leaves = set(tree.leaves())
    for g in members:
        if g not in leaves:
            raise ValueError(f"group member {g} is not a leaf of the view")
    if 0 in members:
        return 1.0

    miss = [1.0] * tree.num_nodes
    for i in range(tree.num_nodes - 1, -1, -1):
        if not tree.children[i]:
            miss[i] = 0.0 if i in members else 1.0
            continue
        cap_i = tree.capacity[i]
        prob = 1.0
        for c in tree.children[i]:
            ratio = tree.capacity[c] / cap_i if cap_i > 0.0 else 0.0
            prob *= 1.0 - ratio * (1.0 - miss[c])
        miss[i] = prob
    return 1.0 - miss[0]
