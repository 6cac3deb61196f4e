"""CLI contracts: flags, exit codes, file outputs, reproducibility."""

import csv
import json
import os

import numpy as np
import pytest

from cscseg import cli, data
from cscseg.net import SegNet


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "ds"
    data.generate(root, seed=11, n_cases=10, size=32, n_classes=3, noise_sigma=0.02)
    return str(root)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, dataset):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    code = cli.main([
        "train", "--data", dataset, "--out", out,
        "--epochs", "2", "--t", "1",
        "--config", _tiny_cfg(tmp_path_factory),
    ])
    assert code == 0
    return out


def _tiny_cfg(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cfg") / "tiny.json")
    with open(path, "w") as f:
        json.dump({"widths": [4, 6, 8, 10], "batch_size": 2}, f)
    return path


class TestGenData:
    def test_summary_and_determinism(self, tmp_path, capsys):
        out1 = str(tmp_path / "a")
        code, stdout, _ = run_cli(capsys, "gen-data", "--out", out1, "--cases", "8",
                                  "--size", "32", "--classes", "3")
        assert code == 0
        summary = json.loads(stdout)
        assert summary["n_cases"] == 8
        out2 = str(tmp_path / "b")
        run_cli(capsys, "gen-data", "--out", out2, "--cases", "8",
                "--size", "32", "--classes", "3")
        for rel in ("manifest.json", "images/case_0000.pgm", "masks/case_0007.pgm"):
            a = open(os.path.join(out1, rel), "rb").read()
            b = open(os.path.join(out2, rel), "rb").read()
            assert a == b

    def test_indivisible_size_exits_2(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "gen-data", "--out", str(tmp_path / "x"),
                               "--size", "97")
        assert code == 2
        assert "size" in err

    def test_default_case_count_is_200(self):
        parser = cli.build_parser()
        args = parser.parse_args(["gen-data", "--out", "x"])
        assert args.cases == 200 and args.size == 96 and args.classes == 4


class TestTrain:
    def test_outputs_exist(self, trained_run):
        for name in ("config.json", "loss.csv", "model_best.csct", "report.json"):
            assert os.path.exists(os.path.join(trained_run, name)), name

    def test_effective_config_echoed(self, trained_run):
        cfg = json.load(open(os.path.join(trained_run, "config.json")))
        assert cfg["epochs"] == 2  # the --epochs flag beat the file default
        assert cfg["iterations"] == [1, 1, 1]
        assert cfg["widths"] == [4, 6, 8, 10]
        assert cfg["lr"] == 1e-4 and cfg["weight_decay"] == 1e-4

    def test_rerun_is_byte_identical(self, tmp_path_factory, dataset, trained_run, capsys):
        out2 = str(tmp_path_factory.mktemp("cli") / "run2")
        code = cli.main([
            "train", "--data", dataset, "--out", out2,
            "--epochs", "2", "--t", "1",
            "--config", _tiny_cfg(tmp_path_factory),
        ])
        assert code == 0
        a = open(os.path.join(trained_run, "loss.csv"), "rb").read()
        b = open(os.path.join(out2, "loss.csv"), "rb").read()
        assert a == b
        ra = open(os.path.join(trained_run, "report.json"), "rb").read()
        rb = open(os.path.join(out2, "report.json"), "rb").read()
        assert ra == rb

    def test_t_zero_runs(self, tmp_path, dataset, tmp_path_factory, capsys):
        out = str(tmp_path / "t0")
        code = cli.main([
            "train", "--data", dataset, "--out", out, "--epochs", "1",
            "--t", "0", "--config", _tiny_cfg(tmp_path_factory),
        ])
        assert code == 0
        cfg = json.load(open(os.path.join(out, "config.json")))
        assert cfg["iterations"] == [0, 0, 0]

    def test_stride_flag_rejected_when_not_one(self, tmp_path, dataset, capsys):
        code, _, err = run_cli(capsys, "train", "--data", dataset,
                               "--out", str(tmp_path / "s"), "--stride", "2")
        assert code == 2
        assert "stride" in err

    def test_missing_dataset_exits_2(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "train", "--data", str(tmp_path / "none"),
                               "--out", str(tmp_path / "o"))
        assert code == 2

    def test_flags_override_config_file(self, tmp_path, dataset, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(
            {"epochs": 7, "widths": [4, 6, 8, 10], "batch_size": 2, "lr": 0.5}
        ))
        out = str(tmp_path / "ovr")
        code = cli.main(["train", "--data", dataset, "--out", out,
                         "--config", str(cfg_path), "--epochs", "1"])
        assert code == 0
        effective = json.load(open(os.path.join(out, "config.json")))
        assert effective["epochs"] == 1      # flag wins
        assert effective["lr"] == 0.5        # file beats default

    def test_bad_config_key_exits_2(self, tmp_path, dataset, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"nonsense_knob": 3}')
        code, _, err = run_cli(capsys, "train", "--data", dataset,
                               "--out", str(tmp_path / "o"), "--config", str(bad))
        assert code == 2
        assert "nonsense_knob" in err


class TestEval:
    def test_report_and_schema(self, tmp_path, dataset, trained_run, capsys):
        report_path = str(tmp_path / "report.json")
        code, stdout, _ = run_cli(
            capsys, "eval", "--data", dataset,
            "--model", os.path.join(trained_run, "model_best.csct"),
            "--report", report_path,
        )
        assert code == 0
        report = json.load(open(report_path))
        assert set(report) == {"mean_dsc", "mean_hd95", "per_class", "n_cases"}
        assert json.loads(stdout) == report

    def test_deterministic(self, tmp_path, dataset, trained_run, capsys):
        p1, p2 = str(tmp_path / "r1.json"), str(tmp_path / "r2.json")
        model = os.path.join(trained_run, "model_best.csct")
        run_cli(capsys, "eval", "--data", dataset, "--model", model, "--report", p1)
        run_cli(capsys, "eval", "--data", dataset, "--model", model, "--report", p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_trace_csv(self, tmp_path, dataset, trained_run, capsys):
        trace_path = str(tmp_path / "trace.csv")
        code, _, _ = run_cli(
            capsys, "eval", "--data", dataset,
            "--model", os.path.join(trained_run, "model_best.csct"),
            "--report", str(tmp_path / "r.json"), "--trace", trace_path,
        )
        assert code == 0
        rows = list(csv.reader(open(trace_path)))
        assert rows[0] == ["iteration", "sparsity_gamma1", "sparsity_gamma2", "residual_norm"]
        assert len(rows) == 3  # header + encode + 1 iteration

    def test_missing_model_exits_2(self, tmp_path, dataset, capsys):
        code, _, _ = run_cli(capsys, "eval", "--data", dataset,
                             "--model", str(tmp_path / "nope.csct"),
                             "--report", str(tmp_path / "r.json"))
        assert code == 2

    def test_gt_echo_stub_scores_perfectly(self, dataset):
        # Library-level sanity for the eval path: a ground-truth echo
        # predictor gives DSC 1.0 / HD95 0.0.
        from cscseg import metrics

        manifest, cases = data.load_split(dataset, "val")
        lookup = {c.image.tobytes(): c.mask for c in cases}
        report = metrics.evaluate_cases(
            lambda img: lookup[img.tobytes()], cases, manifest.n_classes
        )
        assert report.mean_dsc == 1.0 and report.mean_hd95 == 0.0


class TestAblate:
    def test_rows_and_partial_flush(self, tmp_path, dataset, tmp_path_factory, capsys):
        out = str(tmp_path / "ablate")
        code, stdout, _ = run_cli(
            capsys, "ablate-t", "--data", dataset, "--t", "0,1", "--out", out,
            "--epochs", "1", "--config", _tiny_cfg(tmp_path_factory),
        )
        assert code == 0
        rows = list(csv.reader(open(os.path.join(out, "ablation.csv"))))
        assert rows[0] == ["T", "mean_dsc", "mean_hd95", "final_sparsity_gamma2"]
        assert [r[0] for r in rows[1:]] == ["0", "1"]
        for row in rows[1:]:
            assert 0.0 <= float(row[3]) <= 1.0
        assert os.path.exists(os.path.join(out, "t0", "model_best.csct"))
        assert os.path.exists(os.path.join(out, "t1", "model_best.csct"))

    def test_bad_t_list_exits_2(self, tmp_path, dataset, capsys):
        code, _, err = run_cli(capsys, "ablate-t", "--data", dataset,
                               "--t", "1,x", "--out", str(tmp_path / "o"))
        assert code == 2
        assert "--t" in err


class TestCheck:
    def test_adjoint_json_and_exit0(self, capsys):
        code, stdout, _ = run_cli(capsys, "check", "adjoint")
        assert code == 0
        report = json.loads(stdout)
        assert report["adjoint"]["passed"] is True
        assert report["adjoint"]["max_rel_err"] <= 1e-10

    def test_oracle_exit0(self, capsys):
        code, stdout, _ = run_cli(capsys, "check", "oracle")
        assert code == 0
        report = json.loads(stdout)
        assert report["mechanics"]["passed"] and report["metrics"]["passed"]

    def test_unknown_suite_exits_2(self, capsys):
        with pytest.raises(SystemExit) as err:
            cli.main(["check", "bogus"])
        assert err.value.code == 2

    def test_help_documents_flags(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train", "--help"])
        out = capsys.readouterr().out
        for flag in ("--data", "--out", "--config", "--t", "--epochs",
                     "--batch-size", "--lr", "--weight-decay", "--seed", "--stride"):
            assert flag in out

    def test_every_subcommand_has_help(self, capsys):
        for sub in ("gen-data", "train", "eval", "ablate-t", "check"):
            with pytest.raises(SystemExit) as err:
                cli.main([sub, "--help"])
            assert err.value.code == 0
            assert capsys.readouterr().out

    def test_grad_report_has_per_param_map(self, capsys):
        import time
        t0 = time.perf_counter()
        code, stdout, _ = run_cli(capsys, "check", "grad")
        elapsed = time.perf_counter() - t0
        assert code == 0
        report = json.loads(stdout)
        params = report["grad"]["params"]
        assert params and all(isinstance(v, float) for v in params.values())
        assert max(params.values()) <= 1e-4
        assert elapsed < 120.0  # `check all` bound minus the other suites


class TestCheckFailure:
    def test_failed_suite_maps_to_exit_1(self, monkeypatch, capsys):
        import cscseg.cli as cli_mod

        monkeypatch.setattr(cli_mod.checks, "run_checks",
                            lambda which: ({"adjoint": {"passed": False}}, False))
        code, stdout, _ = run_cli(capsys, "check", "adjoint")
        assert code == 1
        assert json.loads(stdout)["adjoint"]["passed"] is False


class TestExitCodes:
    def test_divergence_maps_to_exit_3(self, tmp_path, dataset, monkeypatch, capsys):
        import cscseg.cli as cli_mod
        from cscseg.errors import TrainingDiverged

        def blow_up(cfg):
            raise TrainingDiverged("training loss is not finite", 1)

        monkeypatch.setattr(cli_mod, "train", blow_up)
        code, _, err = run_cli(capsys, "train", "--data", dataset,
                               "--out", str(tmp_path / "d"))
        assert code == 3
        assert "epoch 1" in err
