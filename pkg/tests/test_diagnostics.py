from __future__ import annotations

import itertools

import numpy as np
import pytest

from gsndp import diagnostics
from gsndp.diagnostics import (
    EnumerationCapError,
    analyze_cut,
    check_flow_lower_bound,
    check_intact_cut_capacity,
    check_reduction_feasibility,
    check_shattered_bound,
    connection_frequency,
    enumerate_tree_demand_pairs,
    good_tree_frequency,
)
from gsndp.driver import DriverConfig, PartialSolution, augment_one_level, prepare_level
from gsndp.embedding import build_decomposition_tree, build_distribution, cap_capacities
from gsndp.graph import CapacityMap, DemandPair, Instance
from gsndp.instance_io import gen_random
from gsndp.rounding import TreeRoundingConfig, tree_rounding_trace


def _demand(s, t, k):
    return DemandPair(frozenset(s), frozenset(t), k)


def _plain(n, edges, demands=()):
    return Instance(n=n, edges=tuple((u, v, 1.0) for u, v in edges), demands=tuple(demands))


def _level_one_context(seed=5, n=7, density=0.6, q=2):
    inst = gen_random(n, density, (1.0, 5.0), q, 2, seed=seed, mixed_requirements=False)
    config = DriverConfig(seed=seed)
    partial = PartialSolution.initial(inst)
    partial, _rec = augment_one_level(inst, partial, config, np.random.default_rng(seed))
    return inst, prepare_level(inst, partial, config)


# --- analyze_cut ------------------------------------------------------------------


def test_empty_f_all_intact_and_good():
    inst = _plain(4, [(0, 1), (1, 2), (2, 3)], [_demand({0}, {3}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, {0, 1, 2}, set(), emb)
    assert scenario.good and scenario.preimage_load == 0.0
    assert scenario.shattered_count() == 0
    assert scenario.components == (frozenset({0, 1, 2, 3}),)


def test_load_above_half_is_not_good():
    # one-edge graph with capacity 0.6: its tree preimage carries 0.6 > 1/2
    inst = Instance(2, ((0, 1, 1.0),), ())
    emb = build_decomposition_tree(inst, [0.6])
    scenario = analyze_cut(inst, {0}, {0}, emb)
    assert scenario.preimage_load == pytest.approx(0.6, abs=1e-12)
    assert not scenario.good


def test_f_must_be_subset_of_h():
    inst = _plain(3, [(0, 1), (1, 2)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    with pytest.raises(ValueError):
        analyze_cut(inst, {0}, {1}, emb)


def test_shattered_flags_match_pairwise_leaf_connectivity():
    rng = np.random.default_rng(8)
    for trial in range(10):
        edges = []
        for u in range(8):
            for v in range(u + 1, 8):
                if rng.random() < 0.4:
                    edges.append((u, v))
        if len(edges) < 4:
            continue
        inst = _plain(8, edges)
        caps = [float(rng.random() + 0.1) for _ in range(len(edges))]
        emb = build_decomposition_tree(inst, caps)
        h = [e for e in range(len(edges)) if rng.random() < 0.8]
        if not h:
            continue
        f = [e for e in h if rng.random() < 0.3]
        scenario = analyze_cut(inst, h, f, emb)

        # oracle: pairwise leaf connectivity through surviving tree edges
        removed = emb.preimage(f)
        adj = {i: [] for i in range(emb.num_nodes)}
        for t in emb.tree_edges():
            if t not in removed:
                adj[emb.parent[t]].append(t)
                adj[t].append(emb.parent[t])

        def tree_connected(a, b):
            seen, stack = {a}, [a]
            while stack:
                u = stack.pop()
                if u == b:
                    return True
                for w in adj[u]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            return False

        for comp, flag in zip(scenario.components, scenario.shattered):
            leaves = [emb.leaf_of_vertex[v] for v in sorted(comp)]
            expected = any(
                not tree_connected(a, b) for a, b in itertools.combinations(leaves, 2)
            )
            assert flag == expected, f"trial {trial} component {sorted(comp)}"


# --- tree-demand-pair generation ------------------------------------------------------


def test_no_shattered_single_demand_gives_one_pair():
    # H leaves the demand disconnected, components stay intact on the tree
    inst = _plain(4, [(0, 1), (1, 2), (2, 3)], [_demand({0}, {3}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, {0}, set(), emb)
    assert scenario.shattered_count() == 0
    pairs = enumerate_tree_demand_pairs(scenario, inst.demands)
    assert len(pairs) == 1
    assert pairs[0].side_a == frozenset({0, 1})
    assert pairs[0].side_b == frozenset({3})


def test_pair_counts_bounded_by_partitions_times_demands():
    # H empty: every vertex is its own (intact) component; no shattering
    inst = _plain(5, [(0, 1), (1, 2), (2, 3), (3, 4)], [_demand({0}, {4}, 1), _demand({1}, {3}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, set(), set(), emb)
    pairs = enumerate_tree_demand_pairs(scenario, inst.demands)
    assert len(pairs) == 2  # one per demand, no free shattered components
    for pair in pairs:
        assert not pair.side_a & pair.side_b


def test_overlapping_hulls_contribute_no_pairs():
    # S and T touch the same component: the demand is already connected
    inst = _plain(3, [(0, 1), (1, 2)], [_demand({0}, {2}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, {0, 1}, set(), emb)
    assert enumerate_tree_demand_pairs(scenario, inst.demands) == []


def test_shattered_cap_enforced():
    inst = _plain(4, [(0, 1), (2, 3)], [_demand({0}, {3}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, {0, 1}, set(), emb)
    with pytest.raises(EnumerationCapError):
        enumerate_tree_demand_pairs(scenario, inst.demands, cap=-1)


def test_free_components_enumerate_both_sides():
    # disconnect edge 2-3 from H so {2,3} splits off; shatter it via F ... build
    # a concrete case through the real pipeline instead of hand-tuning:
    inst, ctx = _level_one_context(seed=3)
    dist = ctx.fixpoint.distribution
    h = sorted(ctx.bought_after_large)
    found_free = False
    for f in itertools.combinations(h, 1):
        for tree in dist.trees:
            scenario = analyze_cut(inst, h, f, tree)
            if not scenario.good:
                continue
            pairs = enumerate_tree_demand_pairs(scenario, inst.demands)
            by_demand: dict[int, int] = {}
            for p in pairs:
                by_demand[p.demand_index] = by_demand.get(p.demand_index, 0) + 1
            for count in by_demand.values():
                # counts are powers of two: 2^{free shattered components}
                assert count & (count - 1) == 0
                if count > 1:
                    found_free = True
    # the assertion above ran; free components may or may not occur
    assert found_free in (True, False)


# --- quantitative checks ----------------------------------------------------------------


def test_shattered_bound_arithmetic():
    inst = _plain(4, [(0, 1), (1, 2), (2, 3)], [_demand({0}, {3}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    scenario = analyze_cut(inst, {0, 1, 2}, set(), emb)
    # bound 2*1*2 = 4 with zero shattered components
    assert check_shattered_bound(scenario, 1, 2.0)


def test_flow_lower_bound_exhaustive_level_one():
    inst, ctx = _level_one_context(seed=9, n=7)
    dist = ctx.fixpoint.distribution
    h = sorted(ctx.bought_after_large)
    for f in itertools.combinations(h, ctx.effective_level):
        for tree in dist.trees[:4]:
            scenario = analyze_cut(inst, h, f, tree)
            if not scenario.good:
                continue
            for pair in enumerate_tree_demand_pairs(scenario, inst.demands):
                _value, ok = check_flow_lower_bound(tree, f, pair, ctx.effective_level, ctx.beta)
                assert ok, f"F={f}, pair={pair}"


def _spread_flow_scenario():
    """A feasible fractional state whose post-purchase subgraph is deficient.

    Vertices 0 and 2 are joined by one bought path (through vertex 1, edge
    values 1) and nine spread paths at value 2/9, which sits below the large
    threshold 1/(4*level*beta) = 1/4: removing a bought edge genuinely
    disconnects the demand in H, so the tree-demand-pairs are nonempty.
    """
    mids = list(range(3, 12))
    edges = [(0, 1), (1, 2)]
    for mv in mids:
        edges.append((0, mv))
        edges.append((mv, 2))
    inst = _plain(12, edges, [_demand({0}, {2}, 2)])
    values = [1.0, 1.0] + [2.0 / 9.0] * (2 * len(mids))
    return inst, values


def test_flow_lower_bound_nonvacuous_on_spread_solution():
    from gsndp.lp import verify_lp_feasibility

    inst, values = _spread_flow_scenario()
    level, beta = 1, 1.0
    assert verify_lp_feasibility(inst, values, 2, tolerance=1e-9).ok
    capped = cap_capacities(values, level, beta, inst.n)
    assert capped.large == frozenset({0, 1})
    h = sorted(capped.large)
    dist = build_distribution(inst, capped.values, 4)
    checked = 0
    for f in ((0,), (1,)):
        for tree in dist.trees:
            scenario = analyze_cut(inst, h, f, tree)
            if not scenario.good:
                continue
            assert check_shattered_bound(scenario, level, beta)
            pairs = enumerate_tree_demand_pairs(scenario, inst.demands)
            assert pairs, "deficient state must generate tree-demand-pairs"
            for pair in pairs:
                value, ok = check_flow_lower_bound(tree, f, pair, level, beta)
                assert ok, f"F={f}: residual flow {value} below threshold"
                checked += 1
    assert checked > 0


def test_good_tree_frequency_empty_f_is_one():
    inst = _plain(4, [(0, 1), (1, 2), (2, 3)])
    dist = build_distribution(inst, CapacityMap.uniform(inst, 1.0), 3)
    assert good_tree_frequency(dist, set()) == pytest.approx(1.0, abs=1e-12)


def test_intact_cut_capacity_small_edges_identity():
    # all-SMALL crossing edges keep their values verbatim under capping
    inst = _plain(4, [(0, 1), (1, 2), (2, 3)], [_demand({0}, {3}, 1)])
    values = [0.2, 0.22, 0.24]
    capped = cap_capacities(values, 1, 1.0, 4)
    assert capped.small == frozenset({0, 1, 2})
    total, _ok = check_intact_cut_capacity(
        inst, values, capped, set(), frozenset({0, 1}), inst.demands[0]
    )
    # only edge 1 crosses the side {0, 1}
    assert total == pytest.approx(0.22, abs=1e-12)


def test_intact_cut_capacity_passes_on_spread_solution():
    inst, values = _spread_flow_scenario()
    capped = cap_capacities(values, 1, 1.0, inst.n)
    dem = inst.demands[0]
    # the singleton source side is intact for F = one bought edge and keeps
    # eight spread paths plus one capped edge
    total, ok = check_intact_cut_capacity(
        inst, values, capped, {0}, frozenset({0}), dem
    )
    assert ok and total >= 0.75


def test_intact_cut_capacity_validates_side():
    inst = _plain(3, [(0, 1), (1, 2)], [_demand({0}, {2}, 1)])
    capped = cap_capacities([0.5, 0.5], 1, 1.0, 3)
    with pytest.raises(ValueError):
        check_intact_cut_capacity(inst, [0.5, 0.5], capped, set(), frozenset({2}), inst.demands[0])


# --- reduction feasibility ----------------------------------------------------------------


def test_reduction_with_all_surviving_tree_edges():
    inst, ctx = _level_one_context(seed=21)
    dist = ctx.fixpoint.distribution
    h = sorted(ctx.bought_after_large)
    ran = 0
    for f in itertools.combinations(h, 1):
        tree = dist.trees[0]
        scenario = analyze_cut(inst, h, f, tree)
        if not scenario.good:
            continue
        choose = frozenset(tree.tree_edges()) - tree.preimage(f)
        outcome = check_reduction_feasibility(inst, h, f, tree, choose, inst.demands)
        assert outcome.status in ("pass", "not_applicable")
        if outcome.applicable:
            assert outcome.passed
            ran += 1
    assert ran > 0


def test_reduction_vacuous_when_no_pairs():
    inst = _plain(3, [(0, 1), (1, 2)], [_demand({0}, {2}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    outcome = check_reduction_feasibility(inst, {0, 1}, set(), emb, frozenset(emb.tree_edges()), inst.demands)
    assert outcome.passed  # hulls overlap: nothing to cover, demands connected in H


def test_reduction_not_applicable_when_subset_touches_preimage():
    inst = _plain(3, [(0, 1), (1, 2)], [_demand({0}, {2}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    f = {0}
    removed = emb.preimage(f)
    assert removed
    outcome = check_reduction_feasibility(inst, {0, 1}, f, emb, removed, inst.demands)
    assert outcome.status == "not_applicable"


def test_reduction_on_sampled_rounding_output():
    inst, ctx = _level_one_context(seed=33)
    dist = ctx.fixpoint.distribution
    tree = dist.trees[0]
    h = sorted(ctx.bought_after_large)
    rcfg = TreeRoundingConfig.for_instance(inst.n, ctx.flow_fraction)
    rng = np.random.default_rng(17)
    ran = 0
    for f in itertools.combinations(h, 1):
        scenario = analyze_cut(inst, h, f, tree)
        if not scenario.good:
            continue
        for _ in range(5):
            trace = tree_rounding_trace(inst, tree, rcfg, rng)
            chosen = trace.tree_edges - tree.preimage(f)
            outcome = check_reduction_feasibility(inst, h, f, tree, chosen, inst.demands)
            # conditioned on coverage (applicable), the implication must hold
            if outcome.applicable:
                assert outcome.passed
                ran += 1
        if ran >= 10:
            break
    assert ran > 0


# --- audit orchestration ---------------------------------------------------------------------


def test_audit_level_runs_clean_on_small_instance():
    inst, ctx = _level_one_context(seed=2, n=7)
    audit = diagnostics.audit_level(inst, ctx, rng=np.random.default_rng(0))
    assert audit.ok, (audit.failures, audit.intact_cut_failures)
    assert not audit.sampled
    assert audit.rows
    csv_text = audit.to_csv()
    assert csv_text.splitlines()[0].startswith("tree,f_edges,good")
    assert len(csv_text.splitlines()) == len(audit.rows) + 1


def test_audit_samples_beyond_cap():
    inst, ctx = _level_one_context(seed=2, n=7)
    audit = diagnostics.audit_level(inst, ctx, f_cap=3, rng=np.random.default_rng(1))
    assert audit.sampled
    assert len({row.f_edges for row in audit.rows}) <= 3


def test_connection_frequency_tree_path():
    inst = _plain(5, [(0, 1), (1, 2), (2, 3), (3, 4)], [_demand({0}, {4}, 1)])
    emb = build_decomposition_tree(inst, CapacityMap.uniform(inst, 1.0))
    cfg = TreeRoundingConfig(flow_fraction=1.0, gkr_repeats=1, q_levels=0)
    freq = connection_frequency(inst, emb, cfg, {0}, {4}, 30, np.random.default_rng(4))
    assert freq == 1.0  # scaled capacities hit 1 everywhere on a tree graph
