"""Tree rounding: q-marking, capacity scaling, and repeated GKR sampling.

For every dyadic scale ``q`` from 0 to ``q_levels`` and every tree node, the
node is marked independently with probability ``min(1, (8/f) * 2^-q)``; a
marked node roots a subtree view with capacities scaled by ``2^(q+1)``
(clipped top-down into [0, 1]) on which the GKR sampler runs a fixed number
of times.  The union of all sampled tree edges, mapped through the embedding
back to graph walks, is the returned edge set.

Marking and sampling consume a single RNG stream in a fixed iteration order
(scale outer, node id inner), so a seed fully determines the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import TreeEmbedding
from .graph import Instance
from .gkr import RoundingTree, round_gkr


@dataclass(frozen=True)
class TreeRoundingConfig:
    """Flow target ``f``, GKR repetitions, and the dyadic scale range."""

    flow_fraction: float
    gkr_repeats: int
    q_levels: int

    def __post_init__(self) -> None:
        if not (0.0 < self.flow_fraction <= 1.0):
            raise ValueError("flow_fraction must lie in (0, 1]")
        if self.gkr_repeats < 1:
            raise ValueError("gkr_repeats must be >= 1")
        if self.q_levels < 0:
            raise ValueError("q_levels must be >= 0")

    @classmethod
    def for_instance(
        cls, n: int, flow_fraction: float, gkr_repeats: int | None = None
    ) -> "TreeRoundingConfig":
        """Defaults: ``q_levels = ceil(2 log2(2 n^2 / f))`` and
        ``gkr_repeats = ceil(4 ln n) + 4``."""
        if gkr_repeats is None:
            gkr_repeats = math.ceil(4.0 * math.log(max(2, n))) + 4
        q_levels = max(0, math.ceil(2.0 * math.log2(2.0 * n * n / flow_fraction)))
        return cls(flow_fraction=flow_fraction, gkr_repeats=gkr_repeats, q_levels=q_levels)


def mark_probability(flow_fraction: float, q: int) -> float:
    """Marking probability ``min(1, (8/f) * 2^-q)`` at dyadic scale ``q``."""
    return min(1.0, (8.0 / flow_fraction) * 2.0 ** (-q))


@dataclass(frozen=True)
class RoundingTrace:
    """Full outcome of one rounding call, for audits and tests."""

    graph_edges: frozenset[int]
    tree_edges: frozenset[int]
    marks: int


def tree_rounding_trace(
    instance: Instance,
    embedding: TreeEmbedding,
    config: TreeRoundingConfig,
    rng: np.random.Generator,
) -> RoundingTrace:
    """Like :func:`tree_rounding` but also reports the selected tree edges."""
    f = config.flow_fraction
    selected_tree: set[int] = set()
    marks = 0
    topo_cache: dict[int, tuple[list[int], list[int], list[float]]] = {}
    for q in range(config.q_levels + 1):
        prob = mark_probability(f, q)
        scale = 2.0 ** (q + 1)
        for v in range(embedding.num_nodes):
            if rng.random() >= prob:
                continue
            marks += 1
            if embedding.is_leaf(v):
                continue
            if v not in topo_cache:
                nodes = embedding.subtree_nodes(v)
                index = {node: i for i, node in enumerate(nodes)}
                parents = [-1] + [index[embedding.parent[node]] for node in nodes[1:]]
                raw = [0.0] + [embedding.edge_capacity[node] for node in nodes[1:]]
                topo_cache[v] = (nodes, parents, raw)
            nodes, parents, raw = topo_cache[v]
            view = RoundingTree(parents, raw, scale=scale, source_nodes=nodes)
            for _ in range(config.gkr_repeats):
                for i in round_gkr(view, rng):
                    selected_tree.add(nodes[i])
    graph_edges: set[int] = set()
    for t in selected_tree:
        graph_edges.update(embedding.edge_path[t])
    return RoundingTrace(
        graph_edges=frozenset(graph_edges),
        tree_edges=frozenset(selected_tree),
        marks=marks,
    )


def tree_rounding(
    instance: Instance,
    embedding: TreeEmbedding,
    config: TreeRoundingConfig,
    rng: np.random.Generator,
) -> frozenset[int]:
    """Graph edges on the walks of all tree edges kept by the marked samplers."""
    return tree_rounding_trace(instance, embedding, config, rng).graph_edges


def selection_marginal_bounds(
    instance: Instance, embedding: TreeEmbedding, config: TreeRoundingConfig
) -> tuple[float, ...]:
    """Analytic per-graph-edge upper bounds on the selection probability.

    Union bound over the preimage tree edges: each can only be kept when one
    of its (at most ``height``) ancestors is marked, and one GKR repetition
    keeps it with probability at most its clipped scaled capacity.
    """
    f = config.flow_fraction
    per_tree_edge = {}
    for t in embedding.tree_edges():
        y = embedding.edge_capacity[t]
        total = 0.0
        for q in range(config.q_levels + 1):
            total += mark_probability(f, q) * min(1.0, 2.0 ** (q + 1) * y)
        per_tree_edge[t] = embedding.height * config.gkr_repeats * total
    bounds = []
    for e in range(instance.num_edges):
        raw = sum(per_tree_edge[t] for t in embedding.preimage([e]))
        bounds.append(min(1.0, raw))
    return tuple(bounds)


@dataclass(frozen=True)
class CostAudit:
    """Empirical per-edge selection frequencies and mean cost over trials."""

    trials: int
    frequencies: tuple[float, ...]
    mean_cost: float
    marginal_bounds: tuple[float, ...]


def expected_cost_audit(
    instance: Instance,
    embedding: TreeEmbedding,
    config: TreeRoundingConfig,
    values: Sequence[float],
    trials: int,
    rng: np.random.Generator,
) -> CostAudit:
    """Run the rounding repeatedly with fresh streams and tally its cost."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    counts = [0] * instance.num_edges
    total_cost = 0.0
    for stream in rng.spawn(trials):
        edges = tree_rounding(instance, embedding, config, stream)
        for e in edges:
            counts[e] += 1
        total_cost += instance.total_cost(edges)
    freqs = tuple(c / trials for c in counts)
    return CostAudit(
        trials=trials,
        frequencies=freqs,
        mean_cost=total_cost / trials,
        marginal_bounds=selection_marginal_bounds(instance, embedding, config),
    )
