import csv
import json

import numpy as np
import pytest

from lwenhance import report as report_mod
from lwenhance.metrics import MetricReport
from lwenhance.train import TrainReport

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _eval_report(n=6, seed=0):
    rng = np.random.default_rng(seed)
    rep = MetricReport()
    rep.psnr_values = list(18.0 + 6.0 * rng.random(n))
    rep.ssim_values = list(0.6 + 0.35 * rng.random(n))
    rep.loe_values = list(0.02 * rng.random(n))
    rep.input_psnr_values = list(12.0 + 5.0 * rng.random(n))
    return rep


class TestEvalReport:
    def test_writes_all_four_files(self, tmp_path):
        rep = _eval_report()
        paths = report_mod.write_eval_report(rep, tmp_path / "report.json")
        assert set(paths) == {"json", "csv", "metrics_png", "psnr_gain_png"}
        for p in paths.values():
            assert p.exists() and p.stat().st_size > 0

    def test_json_matches_report(self, tmp_path):
        rep = _eval_report(n=4, seed=1)
        paths = report_mod.write_eval_report(rep, tmp_path / "report.json")
        loaded = json.loads(paths["json"].read_text())
        assert loaded == rep.to_dict()
        assert loaded["count"] == 4

    def test_csv_rows_round_trip(self, tmp_path):
        rep = _eval_report(n=5, seed=2)
        paths = report_mod.write_eval_report(rep, tmp_path / "report.json")
        with open(paths["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["index", "psnr", "ssim", "loe", "input_psnr"]
        assert len(rows) == 6
        for i, row in enumerate(rows[1:]):
            assert int(row[0]) == i
            assert float(row[1]) == pytest.approx(rep.psnr_values[i], abs=1e-5)
            assert float(row[3]) == pytest.approx(rep.loe_values[i], abs=1e-6)

    def test_figures_are_png(self, tmp_path):
        paths = report_mod.write_eval_report(_eval_report(), tmp_path / "r.json")
        for key in ("metrics_png", "psnr_gain_png"):
            head = paths[key].read_bytes()[:8]
            assert head == PNG_MAGIC
            assert paths[key].stat().st_size > 1024

    def test_infinite_psnr_survives(self, tmp_path):
        rep = _eval_report(n=3, seed=3)
        rep.psnr_values[1] = float("inf")
        paths = report_mod.write_eval_report(rep, tmp_path / "report.json")
        loaded = json.loads(paths["json"].read_text())
        assert loaded["per_image"][1]["psnr"] == "inf"
        assert loaded["mean_psnr"] == "inf"
        with open(paths["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert float(rows[2][1]) == float("inf")
        assert paths["metrics_png"].read_bytes()[:8] == PNG_MAGIC

    def test_creates_missing_directory(self, tmp_path):
        out = tmp_path / "a" / "b" / "report.json"
        paths = report_mod.write_eval_report(_eval_report(n=2), out)
        assert paths["json"] == out
        assert out.exists()

    def test_single_entry(self, tmp_path):
        paths = report_mod.write_eval_report(_eval_report(n=1), tmp_path / "r.json")
        for p in paths.values():
            assert p.exists()


class TestTrainReport:
    def _report(self, epochs=5):
        return TrainReport(
            stage=1,
            initial_loss=1.0,
            epoch_losses=[0.8 * 0.9 ** i for i in range(epochs)],
            learning_rates=[1e-3 * 0.98 ** i for i in range(epochs)],
            epoch_seconds=[1.5] * epochs,
        )

    def test_writes_three_files(self, tmp_path):
        paths = report_mod.write_train_report(self._report(), tmp_path / "train.json")
        assert set(paths) == {"json", "csv", "loss_curve_png"}
        for p in paths.values():
            assert p.exists() and p.stat().st_size > 0
        assert paths["loss_curve_png"].read_bytes()[:8] == PNG_MAGIC

    def test_json_matches_report(self, tmp_path):
        rep = self._report(epochs=3)
        paths = report_mod.write_train_report(rep, tmp_path / "train.json")
        loaded = json.loads(paths["json"].read_text())
        assert loaded == json.loads(rep.to_json())
        assert loaded["final_loss"] == pytest.approx(rep.final_loss)

    def test_csv_has_one_row_per_epoch(self, tmp_path):
        rep = self._report(epochs=4)
        paths = report_mod.write_train_report(rep, tmp_path / "train.json")
        with open(paths["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss", "learning_rate", "seconds"]
        assert len(rows) == 5
        assert float(rows[1][1]) == pytest.approx(rep.epoch_losses[0], abs=1e-5)
        assert float(rows[4][2]) == pytest.approx(rep.learning_rates[3], rel=1e-5)

    def test_zero_epoch_report(self, tmp_path):
        rep = TrainReport(stage=2, initial_loss=0.5)
        paths = report_mod.write_train_report(rep, tmp_path / "train.json")
        for p in paths.values():
            assert p.exists()
        with open(paths["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1
