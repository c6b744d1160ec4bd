"""End-to-end tests for the command-line pipeline."""

import os

import numpy as np
import pytest

from parkload.cli import DEVICE_ROSTER, run
from parkload.data import load_csv


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in list(os.environ):
        if name.startswith("PARKLOAD_"):
            monkeypatch.delenv(name)


TINY_TRAIN = ["--max-iterations", "4", "--feature-dim", "8", "--hidden", "8",
              "--head-dim", "8", "--dropout-rate", "0", "--seed", "1"]


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """One golden-path run shared by the read-only tests below."""
    saved = {k: os.environ.pop(k) for k in list(os.environ) if k.startswith("PARKLOAD_")}
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "park": str(root / "park.csv"),
        "model": str(root / "model.bin"),
        "est": str(root / "est.csv"),
        "report_csv": str(root / "report.csv"),
        "loss": str(root / "model_regression.txt"),
    }
    try:
        assert run(["synth", "--days", "4", "--devices", "2", "--seed", "3",
                    "--out", paths["park"]]) == 0
        assert run(["train", "--data", paths["park"], "--out", paths["model"],
                    *TINY_TRAIN]) == 0
        assert run(["disaggregate", "--model", paths["model"],
                    "--data", paths["park"], "--out", paths["est"]]) == 0
        assert run(["evaluate", "--estimates", paths["est"],
                    "--truth", paths["park"], "--csv", paths["report_csv"]]) == 0
    finally:
        os.environ.update(saved)
    return paths


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["synth", "--nope", "--out", "x.csv"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self):
        assert run([]) == 1

    def test_missing_required_flag_is_usage_error(self, tmp_path):
        assert run(["disaggregate", "--data", "x.csv", "--out", "y.csv"]) == 1

    def test_help_exits_zero_everywhere(self, capsys):
        assert run(["--help"]) == 0
        for name in ("synth", "denoise", "select-k", "train", "disaggregate",
                     "evaluate", "gradcheck", "plot"):
            assert run([name, "--help"]) == 0
            out = capsys.readouterr().out
            assert "--config" in out
            if name != "disaggregate":
                assert "default" in out

    def test_help_echoes_decomposition_defaults(self, capsys):
        assert run(["denoise", "--help"]) == 0
        out = capsys.readouterr().out
        assert "2000.0" in out  # alpha
        assert "0.001" in out  # tau
        assert "1e-07" in out  # tol

    def test_unknown_config_key_names_it(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("vmd.alhpa=3\n")
        assert run(["gradcheck", "--config", str(cfg), "--batches", "1"]) == 1
        assert "vmd.alhpa" in capsys.readouterr().err

    def test_invalid_config_value_names_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("vmd.alpha=-5\n")
        assert run(["gradcheck", "--config", str(cfg), "--batches", "1"]) == 1
        assert "alpha" in capsys.readouterr().err

    def test_malformed_config_line_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("alpha 2000\n")
        assert run(["gradcheck", "--config", str(cfg), "--batches", "1"]) == 1
        assert "line 1" in capsys.readouterr().err

    def test_bad_environment_value_is_usage_error(self, monkeypatch, capsys):
        monkeypatch.setenv("PARKLOAD_TRAIN_BATCH_SIZE", "oops")
        assert run(["gradcheck", "--batches", "1"]) == 1
        assert "PARKLOAD_TRAIN_BATCH_SIZE" in capsys.readouterr().err

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        out = str(tmp_path / "m.bin")
        assert run(["train", "--data", str(tmp_path / "no.csv"), "--out", out]) == 2
        err = capsys.readouterr().err
        assert "train" in err and "no.csv" in err

    def test_corrupt_csv_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("timestamp,load_kw,price,calendar\njunk\n")
        assert run(["select-k", "--data", str(bad)]) == 2
        assert "bad.csv" in capsys.readouterr().err

    def test_unattainable_tolerance_is_numeric_error(self, capsys):
        assert run(["gradcheck", "--batches", "1", "--tolerance", "1e-15"]) == 3
        err = capsys.readouterr().err
        assert "gradcheck" in err and "tolerance" in err


class TestConfigLayering:
    def test_file_then_env_then_flag(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("# comment\nsynth.days=5\n")
        out = str(tmp_path / "p.csv")

        assert run(["synth", "--config", str(cfg), "--out", out]) == 0
        assert "5 days" in capsys.readouterr().out

        monkeypatch.setenv("PARKLOAD_SYNTH_DAYS", "3")
        assert run(["synth", "--config", str(cfg), "--out", out]) == 0
        assert "3 days" in capsys.readouterr().out

        assert run(["synth", "--config", str(cfg), "--days", "2", "--out", out]) == 0
        assert "2 days" in capsys.readouterr().out

    def test_none_clears_an_optional_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("synth.snr_db=none\n")
        out = str(tmp_path / "p.csv")
        assert run(["synth", "--config", str(cfg), "--days", "1", "--out", out]) == 0

    def test_cross_key_constraint_checked_up_front(self, capsys):
        assert run(["select-k", "--data", "irrelevant.csv",
                    "--k-min", "6", "--k-max", "3"]) == 1
        assert "k_min" in capsys.readouterr().err


class TestGoldenPath:
    def test_files_exist_and_load(self, artifacts):
        park = load_csv(artifacts["park"])
        est = load_csv(artifacts["est"])
        assert park.device_names == ("press", "line")
        assert est.device_names == ("press", "line")
        assert est.n_samples == park.n_samples
        assert all(np.all(s.values >= 0) for s in est.device_loads)

    def test_report_csv_has_mean_row(self, artifacts):
        lines = open(artifacts["report_csv"]).read().splitlines()
        assert lines[0] == "device,accuracy,precision,recall,f1_half,f1_standard,cc"
        assert lines[-1].startswith("mean,")
        assert len(lines) == 4

    def test_loss_files_written(self, artifacts):
        for head in ("regression", "classifier"):
            path = artifacts["model"].replace(".bin", f"_{head}.txt")
            rows = open(path).read().splitlines()
            assert len(rows) == 4
            assert rows[0].split()[0] == "1"
            assert float(rows[0].split()[1]) >= 0

    def test_evaluate_prints_table(self, artifacts, capsys):
        assert run(["evaluate", "--estimates", artifacts["est"],
                    "--truth", artifacts["park"]]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split()[0] == "device"
        assert "mean" in out


class TestDeterminism:
    def test_synth_is_bit_identical(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        assert run(["synth", "--days", "3", "--seed", "11", "--out", a]) == 0
        assert run(["synth", "--days", "3", "--seed", "11", "--out", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_train_and_disaggregate_are_bit_identical(self, tmp_path, artifacts):
        m2 = str(tmp_path / "m2.bin")
        assert run(["train", "--data", artifacts["park"], "--out", m2,
                    "--loss-prefix", str(tmp_path / "l2"), *TINY_TRAIN]) == 0
        assert open(m2, "rb").read() == open(artifacts["model"], "rb").read()
        e2 = str(tmp_path / "e2.csv")
        assert run(["disaggregate", "--model", m2, "--data", artifacts["park"],
                    "--out", e2]) == 0
        assert open(e2, "rb").read() == open(artifacts["est"], "rb").read()


class TestDenoiseCommand:
    def test_writes_loadable_csv_and_report(self, tmp_path, artifacts, capsys):
        out = str(tmp_path / "smooth.csv")
        rpt = str(tmp_path / "ksel.txt")
        assert run(["denoise", "--data", artifacts["park"], "--out", out,
                    "--report", rpt]) == 0
        assert "selected_k" in capsys.readouterr().out
        smooth = load_csv(out)
        park = load_csv(artifacts["park"])
        assert smooth.n_samples == park.n_samples
        assert smooth.device_names == park.device_names
        assert not np.allclose(smooth.aggregate.values, park.aggregate.values)
        assert np.all(smooth.aggregate.values >= 0)
        report_text = open(rpt).read()
        assert "selected_k" in report_text and "curvature" in report_text

    def test_fixed_k_skips_selection(self, tmp_path, artifacts, capsys):
        out = str(tmp_path / "smooth.csv")
        assert run(["denoise", "--data", artifacts["park"], "--out", out,
                    "--no-auto-k", "--k", "3"]) == 0
        assert "selected_k" not in capsys.readouterr().out

    def test_requires_out_without_sweep(self, capsys):
        assert run(["denoise", "--data", "x.csv"]) == 1
        assert "--out" in capsys.readouterr().err

    def test_snr_sweep_table(self, tmp_path, artifacts, capsys):
        table_path = str(tmp_path / "sweep.txt")
        assert run(["denoise", "--data", artifacts["park"], "--snr-sweep",
                    "20,30", "--alpha", "100", "--out", table_path]) == 0
        printed = capsys.readouterr().out
        table = open(table_path).read()
        assert table == printed
        lines = table.splitlines()
        assert lines[0] == "snr_db cc_noisy cc_denoised selected_k"
        assert len(lines) == 3
        for line in lines[1:]:
            snr, cc_noisy, cc_denoised, k = line.split()
            assert -1.0 <= float(cc_noisy) <= 1.0
            assert -1.0 <= float(cc_denoised) <= 1.0
            assert int(k) >= 2

    def test_junk_sweep_list_is_usage_error(self, artifacts, capsys):
        assert run(["denoise", "--data", artifacts["park"],
                    "--snr-sweep", "20,abc"]) == 1
        assert "abc" in capsys.readouterr().err


class TestSelectKCommand:
    def test_prints_and_writes_report(self, tmp_path, artifacts, capsys):
        out = str(tmp_path / "report.txt")
        assert run(["select-k", "--data", artifacts["park"], "--k-min", "2",
                    "--k-max", "4", "--out", out]) == 0
        printed = capsys.readouterr().out
        assert printed == open(out).read()
        assert printed.splitlines()[0].split() == ["k", "mean_if", "curvature"]
        assert "selected_k" in printed


class TestGradcheckCommand:
    def test_passes_at_default_tolerance(self, capsys):
        assert run(["gradcheck", "--batches", "2"]) == 0
        out = capsys.readouterr().out
        assert "gradient check passed" in out
        assert "max_relative_error" in out

    def test_step_outside_safe_range_is_usage_error(self, capsys):
        assert run(["gradcheck", "--step", "0.01"]) == 1
        assert "--step" in capsys.readouterr().err


class TestPlotCommand:
    def test_series_chart(self, tmp_path, artifacts):
        prefix = str(tmp_path / "fig")
        assert run(["plot", "--data", artifacts["park"], "--kind", "series",
                    "--out", prefix]) == 0
        svg = open(prefix + ".svg").read()
        assert svg.startswith("<?xml")
        assert "<svg xmlns=" in svg and svg.rstrip().endswith("</svg>")
        assert "source_sha256:" in svg and "config_sha256:" in svg
        assert "seeds:" in svg
        assert "polyline" in svg
        assert "http://www.w3.org/2000/svg" in svg
        rows = open(prefix + ".csv").read().splitlines()
        assert rows[0] == "index,load_kw"
        assert len(rows) == 1 + load_csv(artifacts["park"]).n_samples

    def test_loss_chart(self, tmp_path, artifacts):
        prefix = str(tmp_path / "loss_fig")
        assert run(["plot", "--data", artifacts["loss"], "--kind", "loss",
                    "--out", prefix]) == 0
        rows = open(prefix + ".csv").read().splitlines()
        assert rows[0] == "iteration,loss"
        assert len(rows) == 5

    def test_report_chart(self, tmp_path, artifacts):
        prefix = str(tmp_path / "report_fig")
        assert run(["plot", "--data", artifacts["report_csv"], "--kind", "report",
                    "--out", prefix]) == 0
        rows = open(prefix + ".csv").read().splitlines()
        assert rows[0] == "device,f1_standard,cc"
        assert len(rows) == 3  # two devices, mean row excluded

    def test_charts_are_bit_identical(self, tmp_path, artifacts):
        p1, p2 = str(tmp_path / "f1"), str(tmp_path / "f2")
        for prefix in (p1, p2):
            assert run(["plot", "--data", artifacts["park"], "--kind", "series",
                        "--out", prefix]) == 0
        assert open(p1 + ".svg", "rb").read() == open(p2 + ".svg", "rb").read()
        assert open(p1 + ".csv", "rb").read() == open(p2 + ".csv", "rb").read()

    def test_bad_kind_is_usage_error(self, artifacts):
        assert run(["plot", "--data", artifacts["park"], "--kind", "pie",
                    "--out", "x"]) == 1

    def test_junk_loss_file_is_data_error(self, tmp_path, capsys):
        junk = tmp_path / "junk.txt"
        junk.write_text("not numbers here\n")
        assert run(["plot", "--data", str(junk), "--kind", "loss", "--out",
                    str(tmp_path / "f")]) == 2
        assert "junk.txt" in capsys.readouterr().err


class TestRoster:
    def test_names_are_unique_and_column_safe(self):
        names = [s.name for s in DEVICE_ROSTER]
        assert len(set(names)) == len(names)
        assert all(n.isidentifier() for n in names)
