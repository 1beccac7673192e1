"""Level-by-level connectivity augmentation with Las-Vegas verification.

Each level solves the augmentation LP with costs zeroed on edges already
bought, finds a consistent congestion parameter and tree distribution through
the capping fixed point, buys every LARGE edge outright, and then (if some
demand is still short) repeatedly samples a tree and appends tree-rounding
output until the max-flow verifier certifies the next connectivity level.
In Las-Vegas mode feasibility of the returned solution is therefore
deterministic; Monte-Carlo mode runs the fixed budgets and may fail, which is
useful for measuring empirical success rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .embedding import CappedCapacities, EmbeddingConfig, FixPointResult, fix_point_beta
from .graph import CapacityMap, CutCertificate, Instance, max_flow, set_pair_edge_connectivity
from .lp import AugmentationLp, FractionalSolution, build_augmentation_lp, solve_fractional
from .rounding import TreeRoundingConfig, tree_rounding


class AugmentationError(Exception):
    """Rounding budgets and restarts exhausted without reaching the level."""

    def __init__(self, level: int, demand_index: int, certificate: CutCertificate | None):
        self.level = level
        self.demand_index = demand_index
        self.certificate = certificate
        super().__init__(
            f"failed to reach connectivity {level + 1} for demand {demand_index}"
        )


@dataclass(frozen=True)
class DriverConfig:
    """Solver knobs; unset budgets are derived from instance size per level.

    ``tau1`` caps the number of sampled trees per level and ``tau2`` the
    roundings per sampled tree; with ``las_vegas`` the loops exit early on
    verified feasibility and restart with fresh randomness up to
    ``max_restarts`` times otherwise.
    """

    seed: int = 0
    tau1: int | None = None
    tau2: int | None = None
    gkr_repeats: int | None = None
    phi_hat: float = 0.1
    beta0: float | None = None
    fixpoint_iters: int = 5
    num_trees: int | None = None
    epsilon_mwu: float = 0.5
    las_vegas: bool = True
    max_restarts: int = 5

    def __post_init__(self) -> None:
        for name in ("tau1", "tau2", "gkr_repeats", "num_trees"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1 when set")
        if not (0.0 < self.phi_hat <= 1.0):
            raise ValueError("phi_hat must lie in (0, 1]")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(num_trees=self.num_trees, epsilon_mwu=self.epsilon_mwu)

    def resolved_tau1(self, level: int, n: int) -> int:
        if self.tau1 is not None:
            return self.tau1
        return math.ceil(3.0 * (level + 1) * math.log(max(2, n))) + 3

    def resolved_tau2(self, level: int, n: int, q: int, beta: float) -> int:
        if self.tau2 is not None:
            return self.tau2
        raw = (
            math.log(max(q, 2))
            + 2.0 * level * math.log(max(2, n))
            + 2.0 * level * beta * math.log(2.0)
            + math.log(4.0)
        )
        return math.ceil(raw / self.phi_hat)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "gkr_repeats": self.gkr_repeats,
            "phi_hat": self.phi_hat,
            "beta0": self.beta0,
            "fixpoint_iters": self.fixpoint_iters,
            "num_trees": self.num_trees,
            "epsilon_mwu": self.epsilon_mwu,
            "las_vegas": self.las_vegas,
            "max_restarts": self.max_restarts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DriverConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class PartialSolution:
    """Bought edges after some number of augmentation levels."""

    level: int
    edges: frozenset[int]
    cost: float

    @classmethod
    def initial(cls, instance: Instance) -> "PartialSolution":
        free = frozenset(e for e in range(instance.num_edges) if instance.edges[e][2] == 0.0)
        return cls(level=0, edges=free, cost=0.0)


@dataclass(frozen=True)
class LevelRecord:
    """Metrics for one augmentation level, JSON-serializable."""

    level: int
    requirement: int
    lp_value: float
    beta: float
    beta_converged: bool
    beta_iterations: int
    large_count: int
    large_cost_added: float
    rounding_cost_added: float
    trees_sampled: int
    roundings_used: int
    restarts: int
    tau1: int
    tau2: int
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "requirement": self.requirement,
            "lp_value": self.lp_value,
            "beta": self.beta,
            "beta_converged": self.beta_converged,
            "beta_iterations": self.beta_iterations,
            "large_count": self.large_count,
            "large_cost_added": self.large_cost_added,
            "rounding_cost_added": self.rounding_cost_added,
            "trees_sampled": self.trees_sampled,
            "roundings_used": self.roundings_used,
            "restarts": self.restarts,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "feasible": self.feasible,
        }


@dataclass(frozen=True)
class LevelContext:
    """Everything the rounding loop and the lemma audits need at one level."""

    level: int
    effective_level: int
    requirement: int
    lp: AugmentationLp
    solution: FractionalSolution
    fixpoint: FixPointResult
    large: frozenset[int]
    bought_after_large: frozenset[int]

    @property
    def beta(self) -> float:
        return self.fixpoint.beta

    @property
    def capped(self) -> CappedCapacities:
        return self.fixpoint.capped

    @property
    def flow_fraction(self) -> float:
        return self.capped.large_threshold


def prepare_level(
    instance: Instance,
    partial: PartialSolution,
    config: DriverConfig,
    rng: np.random.Generator | None = None,
) -> LevelContext:
    """Solve the level LP and run the capping/embedding fixed point.

    The capping formulas are undefined at level 0, so they are evaluated at
    ``max(level, 1)``; any constant threshold works there since the LP already
    asks for a single path.
    """
    level = partial.level
    lp = build_augmentation_lp(instance, partial.edges, level)
    solution = solve_fractional(lp)
    effective_level = max(level, 1)
    fixpoint = fix_point_beta(
        instance,
        solution.values,
        effective_level,
        beta0=config.beta0,
        max_iters=config.fixpoint_iters,
        config=config.embedding_config(),
        rng=rng,
    )
    large = fixpoint.capped.large
    return LevelContext(
        level=level,
        effective_level=effective_level,
        requirement=lp.requirement,
        lp=lp,
        solution=solution,
        fixpoint=fixpoint,
        large=large,
        bought_after_large=partial.edges | large,
    )


def _pending_demands(
    instance: Instance, edges: frozenset[int], requirement: int, candidates: Iterable[int]
) -> list[int]:
    pending = []
    for i in candidates:
        dem = instance.demands[i]
        if set_pair_edge_connectivity(instance, edges, dem.sources, dem.sinks) < requirement:
            pending.append(i)
    return pending


def _verify_level(instance: Instance, edges: frozenset[int], requirement: int) -> list[int]:
    return _pending_demands(instance, edges, requirement, range(len(instance.demands)))


def augment_one_level(
    instance: Instance,
    partial: PartialSolution,
    config: DriverConfig,
    rng: np.random.Generator,
) -> tuple[PartialSolution, LevelRecord]:
    """Raise every demand from ``partial.level`` to the next level.

    In Las-Vegas mode the returned solution is verified feasible or
    :class:`AugmentationError` is raised after exhausting restarts; in
    Monte-Carlo mode the record's ``feasible`` flag reports the outcome and
    the partial solution's level only advances on success.
    """
    level = partial.level
    if level > 0:
        shortfall = _verify_level(instance, partial.edges, level)
        if shortfall:
            raise ValueError(f"partial solution is not {level}-connected for demands {shortfall}")

    ctx = prepare_level(instance, partial, config, rng=None)
    edges = set(partial.edges | ctx.large)
    large_cost = instance.total_cost(edges) - partial.cost

    n = instance.n
    q = len(instance.demands)
    tau1 = config.resolved_tau1(level, n)
    tau2 = config.resolved_tau2(level, n, q, ctx.beta)
    rcfg = TreeRoundingConfig.for_instance(n, ctx.flow_fraction, config.gkr_repeats)

    trees_sampled = 0
    roundings = 0
    restarts = 0
    pending = _verify_level(instance, frozenset(edges), ctx.requirement)
    base_cost = instance.total_cost(edges)

    if pending:
        dist = ctx.fixpoint.distribution
        weights = np.array(dist.weights)
        attempt_rng = rng
        for attempt in range(config.max_restarts + 1):
            for _t1 in range(tau1):
                tree = dist.trees[int(attempt_rng.choice(len(dist.trees), p=weights))]
                trees_sampled += 1
                for _t2 in range(tau2):
                    added = tree_rounding(instance, tree, rcfg, attempt_rng)
                    edges.update(added)
                    roundings += 1
                    if config.las_vegas:
                        pending = _pending_demands(instance, frozenset(edges), ctx.requirement, pending)
                        if not pending:
                            break
                if config.las_vegas and not pending:
                    break
            if not config.las_vegas:
                pending = _verify_level(instance, frozenset(edges), ctx.requirement)
                break
            if not pending:
                break
            restarts = attempt + 1
            attempt_rng = rng.spawn(1)[0]
        if pending and config.las_vegas:
            dem = instance.demands[pending[0]]
            _value, cut = max_flow(
                instance, CapacityMap.for_subset(instance, edges), dem.sources, dem.sinks
            )
            raise AugmentationError(level, pending[0], cut)

    feasible = not pending
    final_edges = frozenset(edges)
    final_cost = instance.total_cost(final_edges)
    record = LevelRecord(
        level=level,
        requirement=ctx.requirement,
        lp_value=ctx.solution.objective,
        beta=ctx.beta,
        beta_converged=ctx.fixpoint.converged,
        beta_iterations=ctx.fixpoint.iterations,
        large_count=len(ctx.large),
        large_cost_added=large_cost,
        rounding_cost_added=final_cost - base_cost,
        trees_sampled=trees_sampled,
        roundings_used=roundings,
        restarts=restarts,
        tau1=tau1,
        tau2=tau2,
        feasible=feasible,
    )
    new_level = level + 1 if feasible else level
    return PartialSolution(level=new_level, edges=final_edges, cost=final_cost), record


@dataclass(frozen=True)
class SolveResult:
    """Final edge set with the per-level ledger and the LP lower bound."""

    edges: frozenset[int]
    cost: float
    requirement: int
    levels: tuple[LevelRecord, ...]
    lower_bound: float
    feasible: bool
    connectivity: tuple[float, ...]

    @property
    def ratio(self) -> float:
        return self.cost / self.lower_bound if self.lower_bound > 0 else math.inf

    def report_dict(self) -> dict:
        lp_sum = sum(rec.lp_value for rec in self.levels)
        level0 = self.levels[0].lp_value if self.levels else 0.0
        return {
            "requirement": self.requirement,
            "cost": self.cost,
            "lower_bound": self.lower_bound,
            "ratio": self.ratio if math.isfinite(self.ratio) else None,
            "lp_values_sum": lp_sum,
            "k_times_level0_lp": self.requirement * level0,
            "feasible": self.feasible,
            "edges": sorted(self.edges),
            "connectivity": [c if math.isfinite(c) else None for c in self.connectivity],
            "levels": [rec.to_dict() for rec in self.levels],
        }


def solve(instance: Instance, config: DriverConfig) -> SolveResult:
    """Run all augmentation levels on a uniform-requirement instance.

    Requires requirements already made uniform (see
    :func:`gsndp.graph.reduce_to_uniform`); zero-cost edges are pre-bought
    since the LP would set them to 1 for free anyway.
    """
    if not instance.demands:
        raise ValueError("instance has no demands")
    if not instance.has_uniform_requirements():
        raise ValueError("requirements are not uniform; apply reduce_to_uniform first")
    k = instance.max_requirement()
    root = np.random.SeedSequence(config.seed)
    level_seqs = root.spawn(k)

    partial = PartialSolution.initial(instance)
    records: list[LevelRecord] = []
    for level in range(k):
        rng = np.random.default_rng(level_seqs[level])
        partial, record = augment_one_level(instance, partial, config, rng)
        records.append(record)
        if not record.feasible:
            break

    connectivity = tuple(
        set_pair_edge_connectivity(instance, partial.edges, d.sources, d.sinks)
        for d in instance.demands
    )
    feasible = all(c >= k for c in connectivity)
    lower_bound = max((rec.lp_value for rec in records), default=0.0)
    return SolveResult(
        edges=partial.edges,
        cost=partial.cost,
        requirement=k,
        levels=tuple(records),
        lower_bound=lower_bound,
        feasible=feasible,
        connectivity=connectivity,
    )
