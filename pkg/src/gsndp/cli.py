"""Command-line harness: gen, lp, embed, solve, verify, diagnose, bench.

Exit code 0 only when every feasibility verdict of the invoked command
passes.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .driver import DriverConfig, PartialSolution, augment_one_level, prepare_level, solve
from .embedding import rload_table_csv
from .graph import reduce_to_uniform, set_pair_edge_connectivity
from .instance_io import (
    canonical_dumps,
    gen_random,
    load_instance,
    load_solution,
    save_instance,
    save_solution,
)
from .lp import build_augmentation_lp, dump_lp, solve_fractional, verify_lp_feasibility
from .experiment import run_experiment


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")
    parser.add_argument("--tolerance", type=float, default=1e-6, help="verification tolerance")
    parser.add_argument("--output-dir", "-o", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--config", type=Path, default=None, help="driver config JSON file")


def _load_config(args: argparse.Namespace) -> DriverConfig:
    overrides = {}
    if args.config is not None:
        overrides = json.loads(args.config.read_text())
    overrides.setdefault("seed", args.seed)
    return DriverConfig.from_dict(overrides)


def _cmd_gen(args: argparse.Namespace) -> int:
    instance = gen_random(
        n=args.n,
        edge_density=args.density,
        cost_range=(args.cost_min, args.cost_max),
        q=args.q,
        k=args.k,
        seed=args.seed,
    )
    args.output_dir.mkdir(parents=True, exist_ok=True)
    path = args.output_dir / args.name
    save_instance(path, instance)
    print(f"wrote {path} (n={instance.n}, m={instance.num_edges}, q={len(instance.demands)})")
    return 0


def _cmd_lp(args: argparse.Namespace) -> int:
    instance = load_instance(args.instance)
    lp = build_augmentation_lp(instance, (), args.level)
    solution = solve_fractional(lp)
    report = verify_lp_feasibility(instance, solution, lp.requirement, args.tolerance)
    print(f"lp objective={solution.objective:.9g} requirement={lp.requirement} ok={report.ok}")
    if args.dump_lp is not None:
        args.dump_lp.write_text(dump_lp(lp))
        print(f"wrote {args.dump_lp}")
    return 0 if report.ok else 1


def _cmd_embed(args: argparse.Namespace) -> int:
    instance = load_instance(args.instance)
    config = _load_config(args)
    partial = PartialSolution.initial(instance)
    ctx = prepare_level(instance, partial, config)
    dist = ctx.fixpoint.distribution
    args.output_dir.mkdir(parents=True, exist_ok=True)
    dot_path = args.output_dir / "tree.dot"
    dot_path.write_text(dist.trees[0].to_dot())
    csv_path = args.output_dir / "rload.csv"
    csv_path.write_text(rload_table_csv(instance, dist))
    print(
        f"beta={ctx.beta:.6g} measured={dist.beta_measured:.6g} "
        f"converged={ctx.fixpoint.converged} trees={len(dist.trees)} "
        f"height={max(t.height for t in dist.trees)}"
    )
    print(f"wrote {dot_path} and {csv_path}")
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    original = load_instance(args.instance)
    config = _load_config(args)
    reduced, _aux = reduce_to_uniform(original)
    result = solve(reduced, config)
    solution_edges = sorted(e for e in result.edges if e < original.num_edges)
    verdicts = [
        bool(
            set_pair_edge_connectivity(original, solution_edges, d.sources, d.sinks)
            >= d.requirement
        )
        for d in original.demands
    ]
    feasible = result.feasible and all(verdicts)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    report = result.report_dict()
    report["demand_verdicts"] = verdicts
    record = {"config": config.to_dict(), "seed": config.seed, "report": report}
    save_solution(args.output_dir / "solution.json", solution_edges, record)
    (args.output_dir / "report.json").write_text(canonical_dumps(report))
    ratio = f"{result.ratio:.4f}" if math.isfinite(result.ratio) else "n/a"
    print(
        f"cost={result.cost:.9g} lower_bound={result.lower_bound:.9g} "
        f"ratio={ratio} feasible={feasible}"
    )
    return 0 if feasible else 1


def _cmd_verify(args: argparse.Namespace) -> int:
    instance = load_instance(args.instance)
    edges, _record = load_solution(args.solution)
    all_ok = True
    for i, dem in enumerate(instance.demands):
        conn = set_pair_edge_connectivity(instance, edges, dem.sources, dem.sinks)
        ok = conn >= dem.requirement
        all_ok &= ok
        shown = "inf" if conn == math.inf else int(conn)
        print(f"demand {i}: connectivity {shown} / required {dem.requirement} -> {'ok' if ok else 'VIOLATED'}")
    return 0 if all_ok else 1


def _cmd_diagnose(args: argparse.Namespace) -> int:
    original = load_instance(args.instance)
    config = _load_config(args)
    reduced, _aux = reduce_to_uniform(original)
    rng = np.random.default_rng(config.seed)
    partial = PartialSolution.initial(reduced)
    for _ in range(args.level):
        partial, _rec = augment_one_level(reduced, partial, config, rng)
    ctx = prepare_level(reduced, partial, config)
    audit = diagnostics.audit_level(reduced, ctx, rng=rng)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = args.output_dir / "lemma_audit.csv"
    csv_path.write_text(audit.to_csv())
    freqs = [f for _f, f in audit.good_tree_frequencies]
    summary = {
        "level": audit.level,
        "beta": audit.beta,
        "beta_converged": audit.beta_converged,
        "sampled": audit.sampled,
        "ok": audit.ok,
        "rows": len(audit.rows),
        "good_tree_frequency_min": min(freqs) if freqs else None,
        "failures": list(audit.failures),
        "intact_cut_failures": list(audit.intact_cut_failures),
    }
    (args.output_dir / "lemma_audit.json").write_text(canonical_dumps(summary))
    print(
        f"audit level={audit.level} beta={audit.beta:.6g} rows={len(audit.rows)} ok={audit.ok}"
    )
    for line in audit.failures:
        print(f"counterexample: {line}")
    for line in audit.intact_cut_failures:
        print(f"counterexample: {line}")
    print(f"wrote {csv_path}")
    return 0 if audit.ok else 1


def _cmd_bench(args: argparse.Namespace) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    records = run_experiment(manifest, args.output_dir, base_dir=Path(args.manifest).parent)
    failures = [r for r in records if r.error or not r.metrics.get("feasible", False)]
    print(f"ran {len(records)} cells, {len(failures)} failures, outputs in {args.output_dir}")
    return 0 if not failures else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gsndp",
        description="Group edge-connectivity survivable network design solver and harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random connectable instance")
    _common_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--density", type=float, default=0.4)
    p.add_argument("--cost-min", type=float, default=1.0)
    p.add_argument("--cost-max", type=float, default=10.0)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--name", default="instance.json")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("lp", help="solve and verify the level LP")
    _common_flags(p)
    p.add_argument("instance", type=Path)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--dump-lp", type=Path, default=None)
    p.set_defaults(func=_cmd_lp)

    p = sub.add_parser("embed", help="build the capped tree distribution")
    _common_flags(p)
    p.add_argument("instance", type=Path)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("solve", help="run the full augmentation solver")
    _common_flags(p)
    p.add_argument("instance", type=Path)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("verify", help="verify a solution file against an instance")
    _common_flags(p)
    p.add_argument("instance", type=Path)
    p.add_argument("solution", type=Path)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("diagnose", help="run the structural lemma audits")
    _common_flags(p)
    p.add_argument("instance", type=Path)
    p.add_argument("--level", type=int, default=1)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("bench", help="run an experiment manifest")
    _common_flags(p)
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
