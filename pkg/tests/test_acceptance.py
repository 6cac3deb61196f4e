"""Acceptance gate: the seven criteria at their pinned tolerances.

Each test prints one PASS line with the measured figure so a run of
`pytest tests/test_acceptance.py -v -s` doubles as the acceptance report.
Criterion 5 trains the full default configuration and dominates the
suite's runtime (several minutes of CPU).
"""

import csv
import json
import os
import time

import numpy as np
import pytest

from cscseg import checks, cli, data, metrics

TRAIN_BUDGET_S = 600.0


@pytest.fixture(scope="module")
def default_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("accept") / "ds")
    code = cli.main(["gen-data", "--out", root])  # 200 cases, 96x96, 4 classes
    assert code == 0
    return root


@pytest.fixture(scope="module")
def tiny_setup(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept-tiny")
    ds = str(base / "ds")
    data.generate(ds, seed=11, n_cases=10, size=32, n_classes=3, noise_sigma=0.02)
    cfg_path = str(base / "tiny.json")
    with open(cfg_path, "w") as f:
        json.dump({"widths": [4, 6, 8, 10], "batch_size": 2, "epochs": 2}, f)
    return ds, cfg_path, base


def test_criterion_1_adjoint_suite():
    t0 = time.perf_counter()
    report = checks.adjoint_suite(n_configs=100)
    elapsed = time.perf_counter() - t0
    assert report["n_configs"] == 100
    assert report["max_rel_err"] <= 1e-10, report
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 1 PASS adjoint: max_rel_err={report['max_rel_err']:.3e} "
          f"over 100 configs in {elapsed:.2f}s")


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    report = checks.gradient_suite()
    elapsed = time.perf_counter() - t0
    assert report["passed"], report["per_op"]
    assert report["max_rel_err"] <= 1e-4
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 2 PASS gradients: max_rel_err={report['max_rel_err']:.3e} "
          f"({len(report['per_op'])} cases, full net included) in {elapsed:.2f}s")


def test_criterion_3_block_mechanics():
    t0 = time.perf_counter()
    report = checks.mechanics_suite()
    elapsed = time.perf_counter() - t0
    assert report["t0_bitwise"] is True
    assert report["fixed_point_exact"] is True
    assert report["soft_threshold_exact"] is True
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 3 PASS mechanics: T=0 bitwise, fixed point exact over "
          f"5 iterations, soft-threshold oracle exact, in {elapsed:.2f}s")


def test_criterion_4_metric_oracles():
    t0 = time.perf_counter()
    report = checks.metrics_oracle_suite(n_pairs=200, size=16)
    elapsed = time.perf_counter() - t0
    assert report["hd95_mismatches"] == 0
    assert report["dsc_fixtures"] == [1.0, 0.0, 0.5]
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 4 PASS metrics: hd95 == brute force on 200 pairs, "
          f"DSC fixtures exact, in {elapsed:.2f}s")


def test_criterion_5_desk_scale_training(default_dataset, tmp_path):
    out = str(tmp_path / "run")
    t0 = time.perf_counter()
    code = cli.main(["train", "--data", default_dataset, "--out", out])
    elapsed = time.perf_counter() - t0
    assert code == 0
    report = json.load(open(os.path.join(out, "report.json")))
    rows = list(csv.DictReader(open(os.path.join(out, "loss.csv"))))
    assert len(rows) == 30
    best = max(float(r["val_dsc"]) for r in rows)
    assert report["mean_dsc"] >= 0.90, report
    assert best >= 0.90
    assert elapsed < TRAIN_BUDGET_S
    print(f"\nACCEPTANCE 5 PASS training: val mean DSC={report['mean_dsc']:.4f} "
          f"(threshold 0.90), 30 epochs in {elapsed:.1f}s")


def test_criterion_6_ablation_harness(tiny_setup, tmp_path):
    ds, cfg_path, _ = tiny_setup
    out = str(tmp_path / "ablation")
    t0 = time.perf_counter()
    code = cli.main(["ablate-t", "--data", ds, "--t", "1,2,3,4", "--out", out,
                     "--config", cfg_path])
    elapsed = time.perf_counter() - t0
    assert code == 0
    rows = list(csv.DictReader(open(os.path.join(out, "ablation.csv"))))
    assert [r["T"] for r in rows] == ["1", "2", "3", "4"]
    for r in rows:
        assert 0.0 <= float(r["final_sparsity_gamma2"]) <= 1.0
        float(r["mean_dsc"])
        float(r["mean_hd95"])
    assert elapsed < 2400.0
    print(f"\nACCEPTANCE 6 PASS ablation: 4 rows, sparsity in [0,1], "
          f"in {elapsed:.1f}s (reduced config; criterion budget 40 min)")


def test_criterion_7_reproducibility(tiny_setup, tmp_path):
    ds, cfg_path, _ = tiny_setup

    def run_train(out):
        assert cli.main(["train", "--data", ds, "--out", out,
                         "--config", cfg_path]) == 0
        return (open(os.path.join(out, "loss.csv"), "rb").read(),
                open(os.path.join(out, "report.json"), "rb").read(),
                open(os.path.join(out, "model_best.csct"), "rb").read())

    a = run_train(str(tmp_path / "r1"))
    b = run_train(str(tmp_path / "r2"))
    assert a == b

    model = os.path.join(str(tmp_path / "r1"), "model_best.csct")
    e1, e2 = str(tmp_path / "e1.json"), str(tmp_path / "e2.json")
    assert cli.main(["eval", "--data", ds, "--model", model, "--report", e1]) == 0
    assert cli.main(["eval", "--data", ds, "--model", model, "--report", e2]) == 0
    assert open(e1, "rb").read() == open(e2, "rb").read()

    ab1, ab2 = str(tmp_path / "a1"), str(tmp_path / "a2")
    for out in (ab1, ab2):
        assert cli.main(["ablate-t", "--data", ds, "--t", "1", "--out", out,
                         "--config", cfg_path]) == 0
    c1 = open(os.path.join(ab1, "ablation.csv"), "rb").read()
    c2 = open(os.path.join(ab2, "ablation.csv"), "rb").read()
    assert c1 == c2
    print("\nACCEPTANCE 7 PASS reproducibility: train/eval/ablate reruns "
          "byte-identical (CSV, JSON, checkpoint)")
