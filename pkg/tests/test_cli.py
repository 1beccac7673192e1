from __future__ import annotations

import json
from pathlib import Path

import pytest

from gsndp.cli import main
from gsndp.instance_io import load_solution, save_instance, save_solution
from gsndp.graph import DemandPair, Instance


def _gen(tmp_path, **kw):
    args = [
        "gen",
        "--n", str(kw.get("n", 8)),
        "--density", str(kw.get("density", 0.6)),
        "--q", str(kw.get("q", 2)),
        "--k", str(kw.get("k", 2)),
        "--seed", str(kw.get("seed", 3)),
        "-o", str(tmp_path),
        "--name", "inst.json",
    ]
    assert main(args) == 0
    return tmp_path / "inst.json"


def test_gen_writes_instance(tmp_path, capsys):
    path = _gen(tmp_path)
    assert path.exists()
    out = capsys.readouterr().out
    assert "wrote" in out


def test_solve_and_verify_round_trip(tmp_path):
    inst = _gen(tmp_path)
    out = tmp_path / "run"
    assert main(["solve", str(inst), "-o", str(out), "--seed", "5"]) == 0
    assert (out / "solution.json").exists()
    assert (out / "report.json").exists()
    assert main(["verify", str(inst), str(out / "solution.json")]) == 0


def test_verify_rejects_bad_solution(tmp_path):
    inst_path = tmp_path / "inst.json"
    inst = Instance(
        3,
        ((0, 1, 1.0), (1, 2, 1.0)),
        (DemandPair(frozenset({0}), frozenset({2}), 1),),
    )
    save_instance(inst_path, inst)
    sol_path = tmp_path / "sol.json"
    save_solution(sol_path, [0], {})  # edge 1 missing: demand cut
    assert main(["verify", str(inst_path), str(sol_path)]) == 1


def test_lp_subcommand(tmp_path, capsys):
    inst = _gen(tmp_path)
    dump = tmp_path / "lp.txt"
    assert main(["lp", str(inst), "--level", "0", "--dump-lp", str(dump)]) == 0
    assert dump.exists()
    assert "lp objective=" in capsys.readouterr().out


def test_embed_subcommand(tmp_path):
    inst = _gen(tmp_path)
    out = tmp_path / "emb"
    assert main(["embed", str(inst), "-o", str(out)]) == 0
    assert (out / "tree.dot").read_text().startswith("graph decomposition_tree")
    assert (out / "rload.csv").read_text().startswith("edge,u,v,expected_rload")


def test_diagnose_subcommand(tmp_path, capsys):
    inst = _gen(tmp_path, n=7, density=0.7, q=2, k=2, seed=11)
    out = tmp_path / "diag"
    assert main(["diagnose", str(inst), "--level", "1", "-o", str(out)]) == 0
    assert (out / "lemma_audit.csv").exists()
    assert (out / "lemma_audit.json").exists()
    assert "ok=True" in capsys.readouterr().out


def test_bench_subcommand(tmp_path):
    inst = _gen(tmp_path)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps(
            {
                "cells": [
                    {"name": "cell", "instance": {"path": "inst.json"}, "seeds": [1]},
                ]
            }
        )
    )
    out = tmp_path / "bench"
    assert main(["bench", str(manifest), "-o", str(out)]) == 0
    assert (out / "metrics.csv").exists()


def test_solve_reads_config_file(tmp_path):
    inst = _gen(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_trees": 4, "las_vegas": True}))
    out = tmp_path / "run"
    assert main(["solve", str(inst), "-o", str(out), "--seed", "2", "--config", str(cfg)]) == 0
    _edges, record = load_solution(out / "solution.json")
    assert record["config"]["num_trees"] == 4
    assert record["config"]["seed"] == 2


def test_solution_reports_original_edges_only(tmp_path):
    # mixed requirements force the uniform reduction internally
    inst_path = tmp_path / "mixed.json"
    inst = Instance(
        4,
        ((0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0), (0, 2, 1.0), (1, 3, 1.0)),
        (
            DemandPair(frozenset({0}), frozenset({2}), 2),
            DemandPair(frozenset({1}), frozenset({3}), 1),
        ),
    )
    save_instance(inst_path, inst)
    out = tmp_path / "run"
    assert main(["solve", str(inst_path), "-o", str(out), "--seed", "1"]) == 0
    edges, _record = load_solution(out / "solution.json")
    assert all(0 <= e < inst.num_edges for e in edges)
    assert main(["verify", str(inst_path), str(out / "solution.json")]) == 0
