import json

import numpy as np
import pytest

from sfnn.cli import main

from conftest import sinusoid


def write_csv(path, values, names=None):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"s{i}" for i in range(values.shape[1])]
    lines = [",".join(names)]
    for row in values:
        lines.append(",".join(f"{v:.10g}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def cointegrated_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = np.cumsum(0.1 + rng.standard_normal(900))
    y = x + 0.1 * rng.standard_normal(900)
    return write_csv(tmp_path / "pair.csv", np.column_stack([x, y]))


@pytest.fixture
def sinusoid_csv(tmp_path):
    return write_csv(tmp_path / "wave.csv", sinusoid(period=24, length=1200))


@pytest.fixture
def noise_csv(tmp_path):
    rng = np.random.default_rng(1)
    return write_csv(tmp_path / "noise.csv", rng.standard_normal(220))


class TestDiagnoseCommand:
    def test_cointegrated_pair_recommends_mixing(self, cointegrated_csv, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            ["diagnose", str(cointegrated_csv), "-o", str(out), "--lookback", "16", "--lags", "1,2,4"]
        )
        assert code == 0
        payload = json.loads((out / "diagnostics.json").read_text())
        assert "series_mixing" in payload["recommended_modules"]
        assert (out / "diagnostics.txt").exists()
        assert (out / "johansen_curve.csv").exists()
        assert (out / "manifest.json").exists()
        assert payload["config_hash"] == json.loads((out / "manifest.json").read_text())["config_hash"]

    def test_single_series_notes_omission(self, noise_csv, tmp_path):
        out = tmp_path / "out1"
        assert main(["diagnose", str(noise_csv), "-o", str(out), "--lookback", "8"]) == 0
        payload = json.loads((out / "diagnostics.json").read_text())
        assert payload["scale_difference"] is None
        assert any("single series" in n for n in payload["notes"])

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = main(["diagnose", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "no such file" in err.lower()
        assert "Traceback" not in err

    def test_bad_cell_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a\n1\nboom\n")
        assert main(["diagnose", str(bad), "-o", str(tmp_path / "o")]) == 2
        assert "row 3" in capsys.readouterr().err


class TestTrainCommand:
    def test_sinusoid_low_test_mse(self, sinusoid_csv, tmp_path):
        out = tmp_path / "run"
        code = main(
            [
                "train",
                str(sinusoid_csv),
                "-o",
                str(out),
                "--lookback",
                "24",
                "--horizon",
                "1",
                "--width",
                "48",
                "--blocks",
                "0",
                "--lr",
                "0.01",
                "--max-epochs",
                "200",
                "--patience",
                "25",
            ]
        )
        assert code == 0
        report = json.loads((out / "train_report.json").read_text())
        assert report["test_mse"] < 1e-3
        assert (out / "checkpoint.bin").exists()
        assert (out / "checkpoint.bin.meta.txt").exists()

    def test_repeat_run_identical_minus_timing(self, noise_csv, tmp_path):
        reports = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(
                [
                    "train", str(noise_csv), "-o", str(out),
                    "--lookback", "8", "--horizon", "2", "--width", "8", "--blocks", "1",
                    "--max-epochs", "3", "--patience", "3", "--seed", "5",
                ]
            )
            assert code == 0
            report = json.loads((out / "train_report.json").read_text())
            report.pop("wall_time")
            reports.append(report)
        assert reports[0] == reports[1]

    def test_lookback_too_long_exits_2(self, noise_csv, tmp_path, capsys):
        code = main(
            ["train", str(noise_csv), "-o", str(tmp_path / "o"), "--lookback", "500", "--horizon", "2"]
        )
        assert code == 2
        assert "too short" in capsys.readouterr().err.lower()

    def test_config_file_precedence(self, noise_csv, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('lookback = 8\nhorizon = 2\nwidth = 8\nblocks = 0\nmax_epochs = 2\npatience = 2\nseed = 3\n')
        out = tmp_path / "cfgrun"
        code = main(
            ["train", str(noise_csv), "-o", str(out), "--config", str(cfg), "--horizon", "3"]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        resolved = manifest["resolved_config"]["model"]
        assert resolved["lookback"] == 8  # from config file
        assert resolved["horizon"] == 3  # flag beats config file
        assert resolved["hidden_width"] == 8

    def test_rejects_bad_config_file(self, noise_csv, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[section]\nx = 1\n")
        assert main(["train", str(noise_csv), "--config", str(cfg), "-o", str(tmp_path / "o")]) == 2


def run_benchmark(csv, out, mode, seeds=2, extra=()):
    return main(
        [
            "benchmark", str(csv), "-o", str(out),
            "--grid", "4,8", "--horizons", "2", "--seeds", str(seeds),
            "--mode", mode, "--width", "8", "--blocks", "0",
            "--max-epochs", "2", "--patience", "2", "--workers", "1",
            *extra,
        ]
    )


class TestBenchmarkCommand:
    def test_both_modes_share_ledger(self, noise_csv, tmp_path):
        out = tmp_path / "bench"
        assert run_benchmark(noise_csv, out, "fair") == 0
        ledger_after_fair = (out / "ledger.jsonl").read_text()
        assert run_benchmark(noise_csv, out, "peek") == 0
        # the peek pass reuses every trial instead of retraining
        assert (out / "ledger.jsonl").read_text() == ledger_after_fair
        assert (out / "summary_fair.md").exists()
        assert (out / "summary_peek.md").exists()
        assert (out / "lookback_curve.csv").exists()

    def test_ledger_has_all_cells(self, noise_csv, tmp_path):
        out = tmp_path / "bench2"
        assert run_benchmark(noise_csv, out, "fair") == 0
        rows = [json.loads(l) for l in (out / "ledger.jsonl").read_text().splitlines()]
        assert len(rows) == 4  # 2 lookbacks x 1 horizon x 2 seeds
        assert {(r["lookback"], r["seed"]) for r in rows} == {(4, 0), (4, 1), (8, 0), (8, 1)}

    def test_nlinears_baseline_column(self, sinusoid_csv, tmp_path):
        out = tmp_path / "bench3"
        code = main(
            [
                "benchmark", str(sinusoid_csv), "-o", str(out),
                "--grid", "12,24", "--horizons", "4", "--seeds", "1",
                "--mode", "fair", "--width", "16", "--blocks", "0",
                "--max-epochs", "2", "--patience", "2", "--workers", "1",
                "--baseline", "nlinears",
            ]
        )
        assert code == 0
        text = (out / "summary_fair.csv").read_text()
        assert "NLinears" in text

    def test_builtin_name_rejects_unknown(self, noise_csv, tmp_path, capsys):
        assert main(["benchmark", str(noise_csv), "-o", str(tmp_path / "o"), "--name", "wat"]) == 2
        assert "built-in" in capsys.readouterr().err

    def test_partially_failed_sweep_still_exits_zero(self, noise_csv, tmp_path, capsys):
        # horizon 150 cannot window the 220-row series at all; horizon 2 can
        out = tmp_path / "partial"
        code = main(
            [
                "benchmark", str(noise_csv), "-o", str(out),
                "--grid", "4", "--horizons", "2,150", "--seeds", "1",
                "--mode", "fair", "--width", "8", "--blocks", "0",
                "--max-epochs", "1", "--patience", "1", "--workers", "1",
            ]
        )
        assert code == 0
        err = capsys.readouterr().err
        assert "skipping horizons" in err
        summary = (out / "summary_fair.csv").read_text()
        assert ",2," in summary and ",150," not in summary

    def test_custom_grid_required_without_name(self, noise_csv, tmp_path, capsys):
        assert main(["benchmark", str(noise_csv), "-o", str(tmp_path / "o")]) == 2


class TestVerifyCommand:
    def test_gradients_suite(self, capsys):
        assert main(["verify", "--suite", "gradients"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 16
        assert "FAIL" not in out

    def test_oracles_suite(self, capsys):
        assert main(["verify", "--suite", "oracles"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_protocol_suite(self, capsys):
        assert main(["verify", "--suite", "protocol"]) == 0
        out = capsys.readouterr().out
        assert "(19, 6, 3)" in out
