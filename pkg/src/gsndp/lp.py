"""Cut-based LP relaxation of the per-level augmentation problem.

The constraint family ``x(delta(X)) >= k`` over all demand-separating cuts is
exponential, so the solver works on the equivalent compact flow formulation:
one set of per-arc flow variables per demand, conservation at non-terminal
vertices, flow value at least ``k``, and every demand's flow capped by the
shared edge variables ``x_e <= 1``.  Max-flow/min-cut makes the two
formulations interchangeable, and an independent max-flow separation verifier
(:func:`verify_lp_feasibility`) checks every solution after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .graph import CapacityMap, CutCertificate, Instance, max_flow


class InfeasibleInstanceError(Exception):
    """Some demand cannot reach its requirement even using every edge."""

    def __init__(self, demand_index: int, flow_value: float, certificate: CutCertificate):
        self.demand_index = demand_index
        self.flow_value = flow_value
        self.certificate = certificate
        super().__init__(
            f"demand {demand_index} supports flow {flow_value:.6g} < requirement; "
            f"violated cut side {sorted(certificate.side)} with capacity {certificate.capacity:.6g}"
        )


@dataclass(frozen=True)
class AugmentationLp:
    """Augmentation LP at one connectivity level.

    Edges already bought (``bought``) have their cost zeroed; the requirement
    is ``level + 1``.
    """

    instance: Instance
    level: int
    requirement: int
    bought: frozenset[int]
    costs: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError("level must be >= 0")
        for e in self.bought:
            if not (0 <= e < self.instance.num_edges):
                raise ValueError(f"bought edge id {e} out of range")


@dataclass(frozen=True)
class FractionalSolution:
    """Per-edge LP values in [0, 1] plus the objective under effective costs."""

    values: tuple[float, ...]
    objective: float


@dataclass(frozen=True)
class DemandVerdict:
    demand_index: int
    satisfied: bool
    flow_value: float
    certificate: CutCertificate | None
    trivial: bool = False


@dataclass(frozen=True)
class FeasibilityReport:
    requirement: int
    tolerance: float
    verdicts: tuple[DemandVerdict, ...]

    @property
    def ok(self) -> bool:
        return all(v.satisfied for v in self.verdicts)

    def violations(self) -> list[DemandVerdict]:
        return [v for v in self.verdicts if not v.satisfied]


def build_augmentation_lp(instance: Instance, bought: Iterable[int], level: int) -> AugmentationLp:
    """LP for raising every demand from ``level`` to ``level + 1`` paths."""
    bought_set = frozenset(bought)
    costs = tuple(0.0 if e in bought_set else instance.edges[e][2] for e in range(instance.num_edges))
    return AugmentationLp(
        instance=instance,
        level=level,
        requirement=level + 1,
        bought=bought_set,
        costs=costs,
    )


def _eligible_demands(instance: Instance) -> list[int]:
    return [i for i, d in enumerate(instance.demands) if not d.trivial]


def solve_fractional(lp: AugmentationLp, tolerance: float = 1e-9) -> FractionalSolution:
    """Solve the compact flow formulation and return the edge variables.

    Demands whose sides overlap impose no constraints.  Values on bought
    edges are clamped to 1 after solving (raising a variable cannot violate a
    covering constraint).  Raises :class:`InfeasibleInstanceError`, carrying a
    violated cut, when some demand is not connectable at the requirement even
    with every edge at capacity 1.
    """
    instance = lp.instance
    m = instance.num_edges
    k = lp.requirement

    # Up-front separability check at unit capacities.
    ones = CapacityMap.uniform(instance, 1.0)
    for i in _eligible_demands(instance):
        dem = instance.demands[i]
        value, cut = max_flow(instance, ones, dem.sources, dem.sinks)
        if value < k - 1e-9:
            raise InfeasibleInstanceError(i, value, cut)

    eligible = _eligible_demands(instance)
    num_flow_blocks = len(eligible)
    # Layout: x_e (m vars), then per eligible demand 2m arc flows
    # (edge e forward u->v at 2e, backward v->u at 2e+1 within the block).
    num_vars = m + 2 * m * num_flow_blocks

    cost_vec = np.zeros(num_vars)
    cost_vec[:m] = lp.costs

    ub_rows: list[int] = []
    ub_cols: list[int] = []
    ub_vals: list[float] = []
    b_ub: list[float] = []
    eq_rows: list[int] = []
    eq_cols: list[int] = []
    eq_vals: list[float] = []
    b_eq: list[float] = []

    def add_ub(cols: Sequence[int], vals: Sequence[float], bound: float) -> None:
        r = len(b_ub)
        ub_rows.extend([r] * len(cols))
        ub_cols.extend(cols)
        ub_vals.extend(vals)
        b_ub.append(bound)

    def add_eq(cols: Sequence[int], vals: Sequence[float], bound: float) -> None:
        r = len(b_eq)
        eq_rows.extend([r] * len(cols))
        eq_cols.extend(cols)
        eq_vals.extend(vals)
        b_eq.append(bound)

    for block, i in enumerate(eligible):
        dem = instance.demands[i]
        off = m + 2 * m * block
        # Shared capacity: forward + backward flow on an edge within x_e.
        for e in range(m):
            add_ub([off + 2 * e, off + 2 * e + 1, e], [1.0, 1.0, -1.0], 0.0)
        # Conservation at non-terminal vertices: inflow - outflow = 0.
        incident: list[list[tuple[int, float]]] = [[] for _ in range(instance.n)]
        for e, (u, v, _c) in enumerate(instance.edges):
            # forward arc u->v
            incident[u].append((off + 2 * e, -1.0))
            incident[v].append((off + 2 * e, 1.0))
            # backward arc v->u
            incident[v].append((off + 2 * e + 1, -1.0))
            incident[u].append((off + 2 * e + 1, 1.0))
        terminals = dem.sources | dem.sinks
        for v in range(instance.n):
            if v in terminals or not incident[v]:
                continue
            add_eq([c for c, _ in incident[v]], [val for _, val in incident[v]], 0.0)
        # Net flow out of the source side >= k  (as <= -k after negation).
        cols: list[int] = []
        vals: list[float] = []
        for s in sorted(dem.sources):
            for c, val in incident[s]:
                cols.append(c)
                vals.append(val)  # inflow is +1, outflow -1; negated net-out
        add_ub(cols, vals, -float(k))

    a_ub = sparse.coo_matrix((ub_vals, (ub_rows, ub_cols)), shape=(len(b_ub), num_vars)).tocsr()
    a_eq = (
        sparse.coo_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), num_vars)).tocsr()
        if b_eq
        else None
    )
    bounds = [(0.0, 1.0)] * m + [(0.0, None)] * (2 * m * num_flow_blocks)

    res = linprog(
        cost_vec,
        A_ub=a_ub,
        b_ub=np.array(b_ub),
        A_eq=a_eq,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"LP solver failed with status {res.status}: {res.message}")

    values = np.clip(res.x[:m], 0.0, 1.0) + 0.0  # normalize -0.0
    for e in lp.bought:
        values[e] = 1.0
    objective = float(np.dot(np.array(lp.costs), values))
    return FractionalSolution(values=tuple(float(v) for v in values), objective=objective)


def verify_lp_feasibility(
    instance: Instance,
    values: Sequence[float] | FractionalSolution,
    requirement: int,
    tolerance: float = 1e-6,
) -> FeasibilityReport:
    """Max-flow separation check of the cut constraints, demand by demand.

    Runs flow under capacities ``min(x_e, 1)`` and flags any demand whose
    flow falls short of the requirement by more than the tolerance, returning
    the violated minimum cut.
    """
    xs = values.values if isinstance(values, FractionalSolution) else tuple(float(v) for v in values)
    if len(xs) != instance.num_edges:
        raise ValueError("value vector length does not match edge count")
    caps = CapacityMap(tuple(min(max(v, 0.0), 1.0) for v in xs))
    verdicts = []
    for i, dem in enumerate(instance.demands):
        if dem.trivial:
            verdicts.append(DemandVerdict(i, True, math.inf, None, trivial=True))
            continue
        value, cut = max_flow(instance, caps, dem.sources, dem.sinks)
        ok = value >= requirement - tolerance
        verdicts.append(DemandVerdict(i, ok, value, None if ok else cut))
    return FeasibilityReport(requirement=requirement, tolerance=tolerance, verdicts=tuple(verdicts))


def dump_lp(lp: AugmentationLp) -> str:
    """Plain-text standard form (rows / columns / bounds) for cross-checking."""
    instance = lp.instance
    m = instance.num_edges
    lines = [
        f"problem augmentation level={lp.level} requirement={lp.requirement}",
        "minimize",
        "  " + " + ".join(f"{lp.costs[e]:.9g} x{e}" for e in range(m)),
        "subject to",
    ]
    for block, i in enumerate(_eligible_demands(instance)):
        dem = instance.demands[i]
        tag = f"d{i}"
        for e in range(m):
            lines.append(f"  {tag}.cap.e{e}: f{tag}.{e}+ + f{tag}.{e}- - x{e} <= 0")
        terminals = dem.sources | dem.sinks
        for v in range(instance.n):
            if v in terminals:
                continue
            terms = []
            for e, (a, b, _c) in enumerate(instance.edges):
                if a == v:
                    terms.append(f"- f{tag}.{e}+ + f{tag}.{e}-")
                elif b == v:
                    terms.append(f"+ f{tag}.{e}+ - f{tag}.{e}-")
            if terms:
                lines.append(f"  {tag}.cons.v{v}: " + " ".join(terms) + " = 0")
        outs = []
        for e, (a, b, _c) in enumerate(instance.edges):
            if a in dem.sources and b not in dem.sources:
                outs.append(f"+ f{tag}.{e}+ - f{tag}.{e}-")
            elif b in dem.sources and a not in dem.sources:
                outs.append(f"- f{tag}.{e}+ + f{tag}.{e}-")
        lines.append(f"  {tag}.value: " + " ".join(outs) + f" >= {lp.requirement}")
    lines.append("bounds")
    for e in range(m):
        lines.append(f"  0 <= x{e} <= 1")
    lines.append("  all flow variables >= 0")
    lines.append("end")
    return "\n".join(lines) + "\n"
