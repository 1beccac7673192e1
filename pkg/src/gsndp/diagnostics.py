"""Brute-force structural audits of the solver's tree-rounding machinery.

For a partial solution H at some level, every edge set F of that size is a
candidate failure: removing it may disconnect a demand.  These audits take
each F, classify the components of H minus F as intact or shattered on a
given tree (shattered: the component's leaves fall apart once the tree edges
mapping through F are removed), generate the tree-demand-pairs that a
rounding pass must connect, and verify the quantitative claims the solver's
budgets rely on:

- low-load trees (preimage capacity of F at most 1/2) appear with frequency
  about 1/2;
- on such trees the shattered-component count stays below ``2 * level * beta``
  and every tree-demand-pair keeps residual tree flow at least
  ``1/(4 * level * beta)``;
- intact demand-separating cuts keep capped capacity at least 3/4 outside F;
- connecting all tree-demand-pairs inside the tree really does reconnect
  every demand in the graph while avoiding F.

Everything here is read-only and desk-scale, guarded by enumeration caps.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embedding import CappedCapacities, TreeDistribution, TreeEmbedding
from .graph import CapacityMap, DemandPair, Instance, UnionFind, connected_components, max_flow
from .rounding import TreeRoundingConfig, tree_rounding_trace

#: Good-tree load threshold on the preimage of F.
GOOD_LOAD_LIMIT = 0.5

#: Refuse to enumerate partitions beyond this many shattered components.
SHATTERED_CAP = 14

#: Refuse to enumerate F-combinations beyond this count (sample instead).
F_COMBINATION_CAP = 100_000

_TOL = 1e-9


class EnumerationCapError(Exception):
    """Enumeration would exceed a configured cap."""

    def __init__(self, what: str, count: int, cap: int):
        self.what = what
        self.count = count
        self.cap = cap
        super().__init__(f"{what}: {count} exceeds cap {cap}")


@dataclass(frozen=True)
class CutScenario:
    """Components of H minus F and their classification on one tree."""

    f_edges: frozenset[int]
    components: tuple[frozenset[int], ...]
    shattered: tuple[bool, ...]
    good: bool
    preimage_load: float
    demand_source_hulls: tuple[frozenset[int], ...]
    demand_sink_hulls: tuple[frozenset[int], ...]

    def shattered_count(self) -> int:
        return sum(self.shattered)

    def is_cut_intact(self, side: frozenset[int]) -> bool:
        """A vertex cut is intact when no component straddles it."""
        return _is_intact_side(self.components, side)


def _is_intact_side(components: Sequence[frozenset[int]], side: frozenset[int]) -> bool:
    for comp in components:
        inside = len(comp & side)
        if 0 < inside < len(comp):
            return False
    return True


@dataclass(frozen=True)
class TreeDemandPair:
    """One pair a rounding pass must connect inside the tree.

    Built from a demand's component hulls plus one side assignment of the
    free shattered components.
    """

    side_a: frozenset[int]
    side_b: frozenset[int]
    demand_index: int
    free_assignment_a: tuple[int, ...]
    free_assignment_b: tuple[int, ...]


def analyze_cut(
    instance: Instance,
    h_edges: Iterable[int],
    f_edges: Iterable[int],
    embedding: TreeEmbedding,
) -> CutScenario:
    """Classify the components of H minus F as intact or shattered on a tree."""
    h_set = frozenset(h_edges)
    f_set = frozenset(f_edges)
    if not f_set <= h_set:
        raise ValueError("F must be a subset of H")
    components = tuple(connected_components(instance, h_set - f_set))

    removed = embedding.preimage(f_set)
    load = sum(embedding.edge_capacity[t] for t in sorted(removed))
    uf = UnionFind(embedding.num_nodes)
    for t in embedding.tree_edges():
        if t not in removed:
            uf.union(embedding.parent[t], t)

    shattered = []
    for comp in components:
        leaves = [embedding.leaf_of_vertex[v] for v in sorted(comp)]
        root_class = uf.find(leaves[0])
        shattered.append(any(uf.find(leaf) != root_class for leaf in leaves[1:]))

    source_hulls = []
    sink_hulls = []
    for dem in instance.demands:
        src_hull: set[int] = set()
        snk_hull: set[int] = set()
        for comp in components:
            if comp & dem.sources:
                src_hull |= comp
            if comp & dem.sinks:
                snk_hull |= comp
        source_hulls.append(frozenset(src_hull))
        sink_hulls.append(frozenset(snk_hull))

    return CutScenario(
        f_edges=f_set,
        components=components,
        shattered=tuple(shattered),
        good=load <= GOOD_LOAD_LIMIT + 1e-12,
        preimage_load=load,
        demand_source_hulls=tuple(source_hulls),
        demand_sink_hulls=tuple(sink_hulls),
    )


def enumerate_tree_demand_pairs(
    scenario: CutScenario,
    demands: Sequence[DemandPair],
    cap: int = SHATTERED_CAP,
) -> list[TreeDemandPair]:
    """All tree-demand-pairs of the scenario: one per eligible demand and
    per side assignment of the shattered components not already forced to a
    side by the demand's hulls (both empty assignments included)."""
    shattered_idx = [i for i, flag in enumerate(scenario.shattered) if flag]
    if len(shattered_idx) > cap:
        raise EnumerationCapError("shattered components", len(shattered_idx), cap)

    pairs: list[TreeDemandPair] = []
    for d, _dem in enumerate(demands):
        src_hull = scenario.demand_source_hulls[d]
        snk_hull = scenario.demand_sink_hulls[d]
        if not src_hull or not snk_hull or (src_hull & snk_hull):
            continue
        free = [
            i
            for i in shattered_idx
            if not (scenario.components[i] <= src_hull or scenario.components[i] <= snk_hull)
        ]
        for bits in range(1 << len(free)):
            extra_a: set[int] = set()
            extra_b: set[int] = set()
            assign_a = []
            assign_b = []
            for pos, comp_idx in enumerate(free):
                if (bits >> pos) & 1:
                    extra_b |= scenario.components[comp_idx]
                    assign_b.append(comp_idx)
                else:
                    extra_a |= scenario.components[comp_idx]
                    assign_a.append(comp_idx)
            pairs.append(
                TreeDemandPair(
                    side_a=frozenset(src_hull | extra_a),
                    side_b=frozenset(snk_hull | extra_b),
                    demand_index=d,
                    free_assignment_a=tuple(assign_a),
                    free_assignment_b=tuple(assign_b),
                )
            )
    return pairs


def check_flow_lower_bound(
    embedding: TreeEmbedding,
    f_edges: Iterable[int],
    pair: TreeDemandPair,
    level: int,
    beta: float,
) -> tuple[float, bool]:
    """Residual tree flow between a pair's leaf images after removing the
    preimage of F, against the ``1/(4*level*beta)`` threshold."""
    removed = embedding.preimage(f_edges)
    tree_inst, caps = embedding.as_flow_instance(removed)
    sources = embedding.leaf_nodes(pair.side_a)
    sinks = embedding.leaf_nodes(pair.side_b)
    value, _cut = max_flow(tree_inst, caps, sources, sinks)
    threshold = 1.0 / (4.0 * level * beta)
    return value, value >= threshold - _TOL


def check_shattered_bound(scenario: CutScenario, level: int, beta: float) -> bool:
    """Shattered components never exceed ``2 * level * beta`` on good trees."""
    return scenario.shattered_count() <= 2.0 * level * beta + 1e-12


@dataclass(frozen=True)
class ReductionCheck:
    status: str  # "pass" | "fail" | "not_applicable"
    detail: str = ""

    @property
    def applicable(self) -> bool:
        return self.status != "not_applicable"

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def check_reduction_feasibility(
    instance: Instance,
    h_edges: Iterable[int],
    f_edges: Iterable[int],
    embedding: TreeEmbedding,
    tree_edge_subset: Iterable[int],
    demands: Sequence[DemandPair],
) -> ReductionCheck:
    """Connecting every tree-demand-pair inside the tree must reconnect every
    demand in the graph while avoiding F.

    Preconditions (disjointness from the preimage of F and coverage of every
    pair) that fail make the check inapplicable rather than failed.
    """
    h_set = frozenset(h_edges)
    f_set = frozenset(f_edges)
    chosen = frozenset(tree_edge_subset)
    removed = embedding.preimage(f_set)
    if chosen & removed:
        return ReductionCheck("not_applicable", "tree edges intersect the preimage of F")

    scenario = analyze_cut(instance, h_set, f_set, embedding)
    pairs = enumerate_tree_demand_pairs(scenario, demands)

    uf = UnionFind(embedding.num_nodes)
    for t in chosen:
        uf.union(embedding.parent[t], t)
    for pair in pairs:
        classes_a = {uf.find(leaf) for leaf in embedding.leaf_nodes(pair.side_a)}
        classes_b = {uf.find(leaf) for leaf in embedding.leaf_nodes(pair.side_b)}
        if not (classes_a & classes_b):
            return ReductionCheck(
                "not_applicable",
                f"pair for demand {pair.demand_index} not covered by the tree edges",
            )

    mapped: set[int] = set()
    for t in chosen:
        mapped.update(embedding.edge_path[t])
    surviving = (h_set | mapped) - f_set
    comps = connected_components(instance, surviving)
    vertex_comp = {}
    for ci, comp in enumerate(comps):
        for v in comp:
            vertex_comp[v] = ci
    for d, dem in enumerate(demands):
        reachable = {vertex_comp[v] for v in dem.sources}
        if not any(vertex_comp[v] in reachable for v in dem.sinks):
            return ReductionCheck("fail", f"demand {d} disconnected despite covered pairs")
    return ReductionCheck("pass")


def good_tree_frequency(distribution: TreeDistribution, f_edges: Iterable[int]) -> float:
    """Weight of the trees whose preimage load of F stays within the limit."""
    f_set = frozenset(f_edges)
    total = 0.0
    for tree, weight in zip(distribution.trees, distribution.weights):
        load = sum(tree.edge_capacity[t] for t in sorted(tree.preimage(f_set)))
        if load <= GOOD_LOAD_LIMIT + 1e-12:
            total += weight
    return total


def check_intact_cut_capacity(
    instance: Instance,
    values: Sequence[float],
    capped: CappedCapacities,
    f_edges: Iterable[int],
    side: frozenset[int],
    demand: DemandPair,
) -> tuple[float, bool]:
    """Capped capacity of a demand-separating intact cut outside F is >= 3/4."""
    if not demand.sources <= side or demand.sinks & side:
        raise ValueError("side must contain the demand sources and avoid the sinks")
    f_set = frozenset(f_edges)
    total = 0.0
    for eid, (u, v, _c) in enumerate(instance.edges):
        if eid in f_set:
            continue
        if (u in side) != (v in side):
            total += capped.values[eid]
    return total, total >= 0.75 - 1e-6


def connection_frequency(
    instance: Instance,
    embedding: TreeEmbedding,
    config: TreeRoundingConfig,
    side_a: Iterable[int],
    side_b: Iterable[int],
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of rounding calls whose selected tree edges connect the leaf
    images of two vertex sets."""
    leaves_a = embedding.leaf_nodes(side_a)
    leaves_b = embedding.leaf_nodes(side_b)
    hits = 0
    for stream in rng.spawn(trials):
        trace = tree_rounding_trace(instance, embedding, config, stream)
        uf = UnionFind(embedding.num_nodes)
        for t in trace.tree_edges:
            uf.union(embedding.parent[t], t)
        classes_a = {uf.find(leaf) for leaf in leaves_a}
        if any(uf.find(leaf) in classes_a for leaf in leaves_b):
            hits += 1
    return hits / trials


@dataclass(frozen=True)
class AuditRow:
    """Per (tree, F) outcome of the audits."""

    tree_index: int
    f_edges: tuple[int, ...]
    good: bool
    preimage_load: float
    shattered_count: int
    pair_count: int
    min_pair_flow: float | None
    shattered_ok: bool
    flow_ok: bool
    pair_count_ok: bool
    reduction_status: str

    def to_csv_row(self) -> str:
        min_flow = "" if self.min_pair_flow is None else f"{self.min_pair_flow:.9g}"
        return ",".join(
            [
                str(self.tree_index),
                ";".join(str(e) for e in self.f_edges),
                "1" if self.good else "0",
                f"{self.preimage_load:.9g}",
                str(self.shattered_count),
                str(self.pair_count),
                min_flow,
                "1" if self.shattered_ok else "0",
                "1" if self.flow_ok else "0",
                "1" if self.pair_count_ok else "0",
                self.reduction_status,
            ]
        )


@dataclass(frozen=True)
class LevelAudit:
    """All audit outcomes for one level context."""

    level: int
    beta: float
    beta_converged: bool
    sampled: bool
    rows: tuple[AuditRow, ...]
    good_tree_frequencies: tuple[tuple[tuple[int, ...], float], ...]
    intact_cut_failures: tuple[str, ...]
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures and not self.intact_cut_failures

    def to_csv(self) -> str:
        header = (
            "tree,f_edges,good,preimage_load,shattered_count,pair_count,"
            "min_pair_flow,shattered_ok,flow_ok,pair_count_ok,reduction_status"
        )
        return "\n".join([header] + [row.to_csv_row() for row in self.rows]) + "\n"


def _f_combinations(
    h_edges: Sequence[int], size: int, cap: int, rng: np.random.Generator | None
) -> tuple[list[tuple[int, ...]], bool]:
    count = math.comb(len(h_edges), size)
    if count <= cap:
        return list(itertools.combinations(sorted(h_edges), size)), False
    if rng is None:
        raise EnumerationCapError("F combinations", count, cap)
    picks = set()
    ordered = sorted(h_edges)
    while len(picks) < cap:
        chosen = tuple(sorted(rng.choice(len(ordered), size=size, replace=False)))
        picks.add(tuple(ordered[i] for i in chosen))
    return sorted(picks), True


def audit_level(
    instance: Instance,
    ctx,
    f_cap: int = F_COMBINATION_CAP,
    shattered_cap: int = SHATTERED_CAP,
    rng: np.random.Generator | None = None,
    check_intact_cuts: bool = True,
    intact_cut_vertex_limit: int = 16,
) -> LevelAudit:
    """Exhaustive (or, beyond the caps, sampled) audit of one level context.

    ``ctx`` is a :class:`gsndp.driver.LevelContext`.  Requires an effective
    level >= 1 so the edge-set size |F| is positive.
    """
    level = ctx.effective_level
    beta = ctx.beta
    h_edges = sorted(ctx.bought_after_large)
    q = len(instance.demands)
    dist = ctx.fixpoint.distribution

    f_sets, sampled = _f_combinations(h_edges, level, f_cap, rng)
    rows: list[AuditRow] = []
    failures: list[str] = []
    good_freqs: list[tuple[tuple[int, ...], float]] = []
    pair_bound = (2.0 ** (2.0 * level * beta)) * max(q, 1)

    for f_tuple in f_sets:
        good_freqs.append((f_tuple, good_tree_frequency(dist, f_tuple)))
        for ti, tree in enumerate(dist.trees):
            scenario = analyze_cut(instance, h_edges, f_tuple, tree)
            if not scenario.good:
                rows.append(
                    AuditRow(ti, f_tuple, False, scenario.preimage_load, scenario.shattered_count(),
                             0, None, True, True, True, "skipped")
                )
                continue
            shattered_ok = check_shattered_bound(scenario, level, beta)
            try:
                pairs = enumerate_tree_demand_pairs(scenario, instance.demands, shattered_cap)
            except EnumerationCapError as exc:
                failures.append(f"tree {ti}, F={f_tuple}: {exc}")
                continue
            pair_count_ok = len(pairs) <= pair_bound + 1e-9
            min_flow: float | None = None
            flow_ok = True
            for pair in pairs:
                value, ok = check_flow_lower_bound(tree, f_tuple, pair, level, beta)
                if min_flow is None or value < min_flow:
                    min_flow = value
                if not ok:
                    flow_ok = False
                    failures.append(
                        f"tree {ti}, F={f_tuple}, demand {pair.demand_index}, "
                        f"pair A={sorted(pair.side_a)} B={sorted(pair.side_b)}: "
                        f"residual flow {value:.9g} < 1/(4*{level}*{beta:.6g})"
                    )
            all_but_preimage = frozenset(tree.tree_edges()) - tree.preimage(f_tuple)
            reduction = check_reduction_feasibility(
                instance, h_edges, f_tuple, tree, all_but_preimage, instance.demands
            )
            if reduction.status == "fail":
                failures.append(f"tree {ti}, F={f_tuple}: reduction check failed: {reduction.detail}")
            if not shattered_ok:
                failures.append(
                    f"tree {ti}, F={f_tuple}: {scenario.shattered_count()} shattered components "
                    f"exceed 2*{level}*{beta:.6g}"
                )
            if not pair_count_ok:
                failures.append(
                    f"tree {ti}, F={f_tuple}: {len(pairs)} pairs exceed {pair_bound:.6g}"
                )
            rows.append(
                AuditRow(ti, f_tuple, True, scenario.preimage_load, scenario.shattered_count(),
                         len(pairs), min_flow, shattered_ok, flow_ok, pair_count_ok, reduction.status)
            )

    intact_failures: list[str] = []
    if check_intact_cuts and instance.n <= intact_cut_vertex_limit:
        for f_tuple in f_sets:
            components = connected_components(instance, set(h_edges) - set(f_tuple))
            for d, dem in enumerate(instance.demands):
                if dem.trivial:
                    continue
                rest = sorted(set(range(instance.n)) - dem.sources - dem.sinks)
                for bits in range(1 << len(rest)):
                    side = set(dem.sources)
                    for pos, v in enumerate(rest):
                        if (bits >> pos) & 1:
                            side.add(v)
                    side_f = frozenset(side)
                    if not _is_intact_side(components, side_f):
                        continue
                    value, ok = check_intact_cut_capacity(
                        instance, ctx.solution.values, ctx.capped, f_tuple, side_f, dem
                    )
                    if not ok:
                        intact_failures.append(
                            f"F={f_tuple}, demand {d}, side {sorted(side_f)}: "
                            f"capped capacity {value:.9g} < 3/4"
                        )

    return LevelAudit(
        level=level,
        beta=beta,
        beta_converged=ctx.fixpoint.converged,
        sampled=sampled,
        rows=tuple(rows),
        good_tree_frequencies=tuple(good_freqs),
        intact_cut_failures=tuple(intact_failures),
        failures=tuple(failures),
    )
