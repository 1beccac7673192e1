"""Manifest-driven experiment orchestration with CSV/SVG exports.

A manifest is a JSON object ``{"cells": [...], "workers": 1}``; each cell
names an instance (a file path or generator parameters), optional driver
config overrides, optional audit settings, and a list of seeds.  Every
(cell, seed) pair is solved independently (failures are recorded, the run
continues) and the results land in ``records.json``, two CSV tables with a
fixed column order, and self-contained SVG plots.

All emitted bytes are determined by (manifest, seeds) except wall-clock
timings, which live in the separate ``timings`` field of each record.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import diagnostics
from .driver import DriverConfig, solve
from .graph import Instance, reduce_to_uniform, set_pair_edge_connectivity
from .instance_io import SchemaError, canonical_dumps, gen_random, load_instance
from .rounding import TreeRoundingConfig
from .svgplot import plot_svg

METRICS_HEADER = [
    "cell",
    "seed",
    "n",
    "m",
    "q",
    "k",
    "feasible",
    "cost",
    "lower_bound",
    "ratio",
    "beta_max",
    "beta_converged_all",
    "levels_run",
    "error",
]

AGGREGATES_HEADER = ["cell", "runs", "mean_cost", "stdev_cost", "mean_ratio", "stdev_ratio"]


@dataclass
class RunRecord:
    """Provenance and metrics of one (cell, seed) run."""

    cell: str
    seed: int
    instance_source: dict
    config: dict
    metrics: dict
    timings: dict
    diagnostics: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "cell": self.cell,
            "seed": self.seed,
            "instance_source": self.instance_source,
            "config": self.config,
            "metrics": self.metrics,
            "timings": self.timings,
            "diagnostics": self.diagnostics,
            "error": self.error,
        }


def _resolve_instance(spec: dict, base_dir: Path) -> Instance:
    if "path" in spec:
        return load_instance(base_dir / spec["path"])
    if "gen" in spec:
        params = dict(spec["gen"])
        return gen_random(
            n=params["n"],
            edge_density=params["density"],
            cost_range=tuple(params.get("cost_range", [1.0, 10.0])),
            q=params["q"],
            k=params["k"],
            seed=params.get("seed", 0),
        )
    raise SchemaError("cell.instance", "need either 'path' or 'gen'")


def _run_cell_seed(
    cell_name: str,
    instance_spec: dict,
    config: DriverConfig,
    audit_spec: dict | None,
    seed: int,
    base_dir: Path,
) -> RunRecord:
    started = time.perf_counter()
    record = RunRecord(
        cell=cell_name,
        seed=seed,
        instance_source=instance_spec,
        config=config.to_dict(),
        metrics={},
        timings={},
    )
    try:
        original = _resolve_instance(instance_spec, base_dir)
        reduced, aux_ids = reduce_to_uniform(original)
        run_config = DriverConfig.from_dict({**config.to_dict(), "seed": seed})
        result = solve(reduced, run_config)
        solution_edges = sorted(e for e in result.edges if e < original.num_edges)
        verdicts = [
            bool(
                set_pair_edge_connectivity(original, solution_edges, d.sources, d.sinks)
                >= d.requirement
            )
            for d in original.demands
        ]
        betas = [rec.beta for rec in result.levels]
        record.metrics = {
            "n": original.n,
            "m": original.num_edges,
            "q": len(original.demands),
            "k": result.requirement,
            "cost": result.cost,
            "lower_bound": result.lower_bound,
            "ratio": result.ratio if math.isfinite(result.ratio) else None,
            "feasible": result.feasible and all(verdicts),
            "beta_max": max(betas) if betas else None,
            "beta_converged_all": all(rec.beta_converged for rec in result.levels),
            "levels": [rec.to_dict() for rec in result.levels],
            "solution_edges": solution_edges,
            "demand_verdicts": verdicts,
        }
        if audit_spec:
            record.diagnostics = _run_audit(reduced, run_config, audit_spec)
    except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the run
        record.error = f"{type(exc).__name__}: {exc}"
    record.timings = {"wall_s": time.perf_counter() - started}
    return record


def _run_audit(instance: Instance, config: DriverConfig, audit_spec: dict) -> dict:
    from .driver import PartialSolution, augment_one_level, prepare_level

    level = int(audit_spec.get("level", 1))
    trials = int(audit_spec.get("connection_trials", 50))
    rng = np.random.default_rng(int(audit_spec.get("seed", 7)))
    partial = PartialSolution.initial(instance)
    for _ in range(level):
        partial, _rec = augment_one_level(instance, partial, config, rng)
    ctx = prepare_level(instance, partial, config)
    audit = diagnostics.audit_level(instance, ctx, rng=rng)
    freqs = [freq for _f, freq in audit.good_tree_frequencies]

    connection = None
    dist = ctx.fixpoint.distribution
    eligible = [d for d in instance.demands if not d.trivial]
    if eligible and dist.trees:
        dem = eligible[0]
        rcfg = TreeRoundingConfig.for_instance(instance.n, ctx.flow_fraction)
        connection = diagnostics.connection_frequency(
            instance, dist.trees[0], rcfg, dem.sources, dem.sinks, trials, rng
        )
    return {
        "level": audit.level,
        "beta": audit.beta,
        "beta_converged": audit.beta_converged,
        "sampled": audit.sampled,
        "ok": audit.ok,
        "failures": list(audit.failures),
        "intact_cut_failures": list(audit.intact_cut_failures),
        "good_tree_frequency_min": min(freqs) if freqs else None,
        "good_tree_frequency_mean": sum(freqs) / len(freqs) if freqs else None,
        "connection_frequency": connection,
    }


def _csv_number(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def run_experiment(manifest: dict, output_dir: str | Path, base_dir: str | Path = ".") -> list[RunRecord]:
    """Execute every (cell, seed) pair of the manifest and write all outputs."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = Path(base_dir)
    cells = manifest.get("cells", [])
    workers = max(1, int(manifest.get("workers", 1)))

    jobs = []
    for i, cell in enumerate(cells):
        name = cell.get("name", f"cell{i}")
        instance_spec = cell["instance"]
        config = DriverConfig.from_dict(cell.get("config", {}))
        audit_spec = cell.get("audit")
        for seed in cell.get("seeds", [0]):
            jobs.append((name, instance_spec, config, audit_spec, int(seed)))

    if workers == 1:
        records = [_run_cell_seed(*job, base) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda job: _run_cell_seed(*job, base), jobs))

    (out / "records.json").write_text(
        canonical_dumps({"records": [r.to_dict() for r in records]})
    )
    _write_metrics_csv(out / "metrics.csv", records)
    _write_aggregates_csv(out / "aggregates.csv", records)
    _write_plots(out, records)
    return records


def _write_metrics_csv(path: Path, records: list[RunRecord]) -> None:
    lines = [",".join(METRICS_HEADER)]
    for r in records:
        m = r.metrics
        lines.append(
            ",".join(
                [
                    r.cell,
                    str(r.seed),
                    _csv_number(m.get("n")),
                    _csv_number(m.get("m")),
                    _csv_number(m.get("q")),
                    _csv_number(m.get("k")),
                    _csv_number(m.get("feasible")),
                    _csv_number(m.get("cost")),
                    _csv_number(m.get("lower_bound")),
                    _csv_number(m.get("ratio")),
                    _csv_number(m.get("beta_max")),
                    _csv_number(m.get("beta_converged_all")),
                    _csv_number(len(m.get("levels", []))) if m else "",
                    json.dumps(r.error) if r.error else "",
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def _write_aggregates_csv(path: Path, records: list[RunRecord]) -> None:
    by_cell: dict[str, list[RunRecord]] = {}
    for r in records:
        by_cell.setdefault(r.cell, []).append(r)
    lines = [",".join(AGGREGATES_HEADER)]
    for cell in sorted(by_cell):
        rows = by_cell[cell]
        costs = [r.metrics["cost"] for r in rows if r.error is None and "cost" in r.metrics]
        ratios = [
            r.metrics["ratio"]
            for r in rows
            if r.error is None and r.metrics.get("ratio") is not None
        ]
        mean_c, std_c = _mean_std(costs)
        mean_r, std_r = _mean_std(ratios)
        lines.append(
            ",".join(
                [
                    cell,
                    str(len(rows)),
                    _csv_number(mean_c),
                    _csv_number(std_c),
                    _csv_number(mean_r),
                    _csv_number(std_r),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _write_plots(out: Path, records: list[RunRecord]) -> None:
    ok = [r for r in records if r.error is None and r.metrics.get("ratio") is not None]
    ratio_pts = [(float(r.metrics["n"]), float(r.metrics["ratio"])) for r in ok]
    (out / "cost_ratio.svg").write_text(
        plot_svg([("cost / LP lower bound", ratio_pts)], "Cost ratio vs instance size", "n", "ratio")
    )
    beta_pts = [
        (float(r.metrics["n"]), float(r.metrics["beta_max"]))
        for r in ok
        if r.metrics.get("beta_max") is not None
    ]
    (out / "beta_measured.svg").write_text(
        plot_svg([("max measured congestion", beta_pts)], "Measured congestion vs instance size", "n", "beta")
    )
    audited = [r for r in records if r.diagnostics]
    if audited:
        good_pts = [
            (float(r.metrics["n"]), float(r.diagnostics["good_tree_frequency_min"]))
            for r in audited
            if r.diagnostics.get("good_tree_frequency_min") is not None and r.metrics
        ]
        (out / "good_tree_frequency.svg").write_text(
            plot_svg(
                [("min good-tree frequency", good_pts)],
                "Good-tree frequency (min over F)",
                "n",
                "frequency",
            )
        )
        conn_pts = [
            (float(r.metrics["n"]), float(r.diagnostics["connection_frequency"]))
            for r in audited
            if r.diagnostics.get("connection_frequency") is not None and r.metrics
        ]
        (out / "connection_frequency.svg").write_text(
            plot_svg(
                [("rounding connection frequency", conn_pts)],
                "Single-call connection frequency",
                "n",
                "frequency",
            )
        )
