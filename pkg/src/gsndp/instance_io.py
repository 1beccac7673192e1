"""Instance files, canonical JSON, and random instance generation.

The instance file is a JSON document ``{n, edges: [{u, v, cost}], demands:
[{S, T, k}]}``.  Loading is strict: unknown fields are rejected and every
error names the offending field.  Saving always goes through the canonical
writer (sorted keys, floats at 9 significant digits), so load -> save -> load
round-trips byte-stably.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .graph import DemandPair, Instance, set_pair_edge_connectivity


class SchemaError(Exception):
    """Instance/solution file violates the schema; ``where`` names the field."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


class GenerationError(Exception):
    """Random generation failed within the retry budget."""


def _format_float(value: float) -> str:
    if value != value or math.isinf(value):
        raise ValueError(f"cannot serialize non-finite float {value}")
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return format(value, ".9g")


def canonical_dumps(payload: Any) -> str:
    """Deterministic JSON: sorted keys, 9-significant-digit floats."""

    def emit(obj: Any) -> str:
        if isinstance(obj, dict):
            items = sorted(obj.items())
            inner = ",".join(f"{json.dumps(str(k))}:{emit(v)}" for k, v in items)
            return "{" + inner + "}"
        if isinstance(obj, (list, tuple)):
            return "[" + ",".join(emit(v) for v in obj) + "]"
        if isinstance(obj, bool):
            return "true" if obj else "false"
        if isinstance(obj, float):
            return _format_float(obj)
        if isinstance(obj, (int, np.integer)):
            return str(int(obj))
        if obj is None:
            return "null"
        if isinstance(obj, str):
            return json.dumps(obj)
        raise TypeError(f"cannot serialize {type(obj)!r}")

    return emit(payload) + "\n"


def _expect_keys(obj: dict, where: str, required: set[str]) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(where, f"expected an object, got {type(obj).__name__}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(where, f"missing fields {sorted(missing)}")
    unknown = set(obj) - required
    if unknown:
        raise SchemaError(where, f"unknown fields {sorted(unknown)}")


def _expect_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(where, f"expected an integer, got {value!r}")
    return value


def _expect_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(where, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SchemaError(where, f"expected a finite number, got {value!r}")
    return float(value)


def instance_from_dict(doc: Any) -> Instance:
    _expect_keys(doc, "instance", {"n", "edges", "demands"})
    n = _expect_int(doc["n"], "n")
    if n < 1:
        raise SchemaError("n", f"must be >= 1, got {n}")
    if not isinstance(doc["edges"], list):
        raise SchemaError("edges", "expected a list")
    edges = []
    for i, entry in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        _expect_keys(entry, where, {"u", "v", "cost"})
        u = _expect_int(entry["u"], f"{where}.u")
        v = _expect_int(entry["v"], f"{where}.v")
        cost = _expect_number(entry["cost"], f"{where}.cost")
        if not (0 <= u < n):
            raise SchemaError(f"{where}.u", f"vertex {u} out of range [0, {n})")
        if not (0 <= v < n):
            raise SchemaError(f"{where}.v", f"vertex {v} out of range [0, {n})")
        if u == v:
            raise SchemaError(where, f"self-loop at vertex {u}")
        if cost < 0:
            raise SchemaError(f"{where}.cost", f"negative cost {cost}")
        edges.append((u, v, cost))
    if not isinstance(doc["demands"], list):
        raise SchemaError("demands", "expected a list")
    demands = []
    for i, entry in enumerate(doc["demands"]):
        where = f"demands[{i}]"
        _expect_keys(entry, where, {"S", "T", "k"})
        for key in ("S", "T"):
            if not isinstance(entry[key], list) or not entry[key]:
                raise SchemaError(f"{where}.{key}", "expected a nonempty list of vertices")
        sources = [_expect_int(v, f"{where}.S[{j}]") for j, v in enumerate(entry["S"])]
        sinks = [_expect_int(v, f"{where}.T[{j}]") for j, v in enumerate(entry["T"])]
        for v in sources + sinks:
            if not (0 <= v < n):
                raise SchemaError(where, f"vertex {v} out of range [0, {n})")
        k = _expect_int(entry["k"], f"{where}.k")
        if k < 1:
            raise SchemaError(f"{where}.k", f"requirement must be >= 1, got {k}")
        demands.append(DemandPair(frozenset(sources), frozenset(sinks), k))
    return Instance(n=n, edges=tuple(edges), demands=tuple(demands))


def instance_to_dict(instance: Instance) -> dict:
    return {
        "n": instance.n,
        "edges": [{"u": u, "v": v, "cost": c} for u, v, c in instance.edges],
        "demands": [
            {"S": sorted(d.sources), "T": sorted(d.sinks), "k": d.requirement}
            for d in instance.demands
        ],
    }


def load_instance(path: str | Path) -> Instance:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("document", f"malformed JSON: {exc}") from exc
    return instance_from_dict(doc)


def save_instance(path: str | Path, instance: Instance) -> None:
    Path(path).write_text(canonical_dumps(instance_to_dict(instance)))


def save_solution(path: str | Path, edges: Iterable[int], record: dict) -> None:
    """Solution file: sorted edge ids, total cost if present in the record,
    and the full run record."""
    payload = {"edges": sorted(set(int(e) for e in edges)), "record": record}
    Path(path).write_text(canonical_dumps(payload))


def load_solution(path: str | Path) -> tuple[list[int], dict]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("document", f"malformed JSON: {exc}") from exc
    _expect_keys(doc, "solution", {"edges", "record"})
    if not isinstance(doc["edges"], list):
        raise SchemaError("edges", "expected a list")
    edges = [_expect_int(e, f"edges[{i}]") for i, e in enumerate(doc["edges"])]
    if not isinstance(doc["record"], dict):
        raise SchemaError("record", "expected an object")
    return edges, doc["record"]


def gen_random(
    n: int,
    edge_density: float,
    cost_range: tuple[float, float],
    q: int,
    k: int,
    seed: int,
    set_sizes: tuple[int, int] = (1, 3),
    mixed_requirements: bool = True,
    max_retries: int = 200,
) -> Instance:
    """Random instance conditioned on every demand being connectable.

    Erdos-Renyi edges at the given density with uniform costs; demands are
    disjoint random vertex sets.  One demand always carries requirement ``k``;
    with ``mixed_requirements`` the rest draw uniformly from ``1..k``.
    Rejection-samples until every demand supports ``k_i`` disjoint paths
    using the whole edge set, or fails after ``max_retries`` attempts.
    """
    if n < 2:
        raise GenerationError(f"need n >= 2, got n={n}")
    if q < 1 or k < 1:
        raise GenerationError(f"need q >= 1 and k >= 1, got q={q} k={k}")
    lo, hi = cost_range
    if not (0 <= lo <= hi):
        raise GenerationError(f"invalid cost range {cost_range}")
    rng = np.random.default_rng(seed)
    size_lo, size_hi = set_sizes

    for _attempt in range(max_retries):
        edges = []
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < edge_density:
                    cost = float(lo + (hi - lo) * rng.random())
                    edges.append((u, v, round(cost, 6)))
        if not edges:
            continue
        perm = [int(v) for v in rng.permutation(n)]
        sizes = [int(rng.integers(size_lo, size_hi + 1)) for _ in range(2 * q)]
        if sum(sizes) > n:
            continue
        groups = []
        pos = 0
        for s in sizes:
            groups.append(frozenset(perm[pos : pos + s]))
            pos += s
        reqs = [k] + [int(rng.integers(1, k + 1)) if mixed_requirements else k for _ in range(q - 1)]
        demands = tuple(
            DemandPair(groups[2 * i], groups[2 * i + 1], reqs[i]) for i in range(q)
        )
        candidate = Instance(n=n, edges=tuple(edges), demands=demands)
        all_edges = range(candidate.num_edges)
        if all(
            set_pair_edge_connectivity(candidate, all_edges, d.sources, d.sinks) >= d.requirement
            for d in demands
        ):
            return candidate
    raise GenerationError(
        f"no connectable instance after {max_retries} attempts "
        f"(n={n}, density={edge_density}, q={q}, k={k}, seed={seed})"
    )
