import numpy as np
import pytest

from pifcast import experiments as E
from pifcast.config import BenchmarkCommand, TransferCommand, parse_config
from pifcast.metrics import rmse

DATASET = {"synthetic": {"step_s": 120}, "lookback": 10}
FAST = {"max_epochs": 4, "patience": 2}


def plan(**kw):
    data = {"dataset": DATASET, "families": ["MLP", "AR"], "strategies": ["data_only", "fixed"],
            "tiers": [2000], "seeds": [0, 1], "train": FAST, "lambda_grid": [0.0, 0.5]}
    data.update(kw)
    return parse_config(BenchmarkCommand, data)


@pytest.fixture(scope="module")
def result():
    return E.run_benchmark(plan())


class TestCells:
    def test_plan_order(self):
        cells = E.plan_cells(plan())
        assert cells[0] == E.Cell("AR")
        assert [c.label for c in cells[1:]] == ["MLP", "MLP", "MLP_fixed", "MLP_fixed"]

    def test_labels(self):
        assert E.Cell("Kalman").label == "KalmanFilter"
        assert E.Cell("cKAN", "rba", 2000, 0).label == "cKAN_RBA"
        assert E.Cell("LEM", "uncertainty", 2000, 0).label == "LEM_uncertainty"

    def test_rows(self, result):
        labels = [r.label for r in result.rows]
        assert labels == ["ARIMA", "ARIMA_fixed", "MLP", "MLP", "MLP_fixed", "MLP_fixed"]
        assert all(r.status == "ok" for r in result.rows)
        fixed = [r for r in result.rows if r.label == "MLP_fixed"]
        assert all(r.lam in (0.0, 0.5) for r in fixed)
        assert result.rows[0].tier is None and result.rows[0].seed is None

    def test_row_metrics_recomputable(self, result):
        ds = result.dataset
        for t in result.trained:
            row = next(r for r in result.rows if r.label == t.label and r.seed == t.seed)
            assert row.reports["normalized"].rmse == rmse(t.predict(ds), ds.y("test"))

    def test_failed_cell_recorded(self):
        res = E.run_benchmark(plan(families=["MLP"], strategies=["data_only"], tiers=[10], seeds=[0]))
        (row,) = res.rows
        assert row.status == "failed" and "InfeasibleTierError" in row.error
        recs = E.per_seed_records(res.rows)
        assert recs[0]["status"] == "failed" and recs[0]["RMSE"] is None
        assert E.aggregate(res.rows) == []


class TestAggregation:
    def test_matches_hand_average(self, result):
        rows = [r for r in result.rows if r.label == "MLP"]
        summary = {(s["units"], s["Model"]): s for s in E.aggregate(result.rows)}
        for units in E.UNITS:
            vals = [r.reports[units].rmse for r in rows]
            s = summary[(units, "MLP")]
            assert s["n_seeds"] == 2
            assert s["RMSE_mean"] == pytest.approx(sum(vals) / 2, abs=1e-15)
            assert s["RMSE_std"] == pytest.approx(abs(vals[0] - vals[1]) / np.sqrt(2), abs=1e-15)

    def test_single_member_std_zero(self, result):
        s = next(s for s in E.aggregate(result.rows) if s["Model"] == "ARIMA")
        assert s["n_seeds"] == 1 and s["RMSE_std"] == 0.0

    def test_csv_columns(self, result):
        text = E.to_csv(E.per_seed_records(result.rows), E.PER_SEED_COLUMNS)
        lines = text.splitlines()
        assert lines[0].split(",") == list(E.PER_SEED_COLUMNS)
        assert len(lines) == 1 + 2 * len(result.rows)
        assert "TrainingTime_s" not in text

    def test_celsius_scale(self, result):
        r = result.rows[2]
        scale = result.dataset.norm.scale
        assert r.reports["celsius"].rmse == pytest.approx(r.reports["normalized"].rmse * scale, rel=1e-12)


class TestNoiseSweep:
    def test_sweep(self, result):
        p = plan(sigmas=[0.0, 0.5, 1.0])
        long = E.run_noise_sweep(p, result.trained, result.dataset)
        assert len(long) == 2 * 3 * len(result.trained) * 2 * 4

        def val(model, sigma, mode, seed=None):
            return next(r["value"] for r in long if r["model"] == model and r["sigma"] == sigma and
                        r["mode"] == mode and r["units"] == "normalized" and r["metric"] == "RMSE" and
                        r["seed"] == seed)

        clean = {r.label: r.reports["normalized"].rmse for r in result.rows if r.seed in (None, 0)}
        assert val("MLP", 0.0, "input_only", 0) == clean["MLP"]
        # classical forecasts ignore test-time readings
        assert val("ARIMA", 0.5, "input_only") == val("ARIMA", 1.0, "input_only") == clean["ARIMA"]
        assert val("MLP", 1.0, "input_only", 0) != clean["MLP"]
        sys = [val("ARIMA", s, "system_wide") for s in (0.0, 0.5, 1.0)]
        assert sys[0] < sys[1] < sys[2]

    def test_needs_models(self, result):
        with pytest.raises(E.ExperimentError):
            E.run_noise_sweep(plan(), [], result.dataset)


class TestTrainingNoiseProtocol:
    def test_rows_labeled(self):
        res = E.run_benchmark(plan(families=["LinReg"], training_noise={"sigma": 0.2}))
        assert {r.protocol for r in res.rows} == {"noisy_train"}


class TestTransfer:
    def test_strategies(self):
        tp = parse_config(TransferCommand, {
            "source": {"family": "MLP", "tier": 2000, "dataset": DATASET},
            "target": {"synthetic": {"recipe": "secondary", "step_s": 120}, "lookback": 10},
            "train": FAST,
        })
        res = E.run_transfer(tp)
        by = {r.strategy: r for r in res.rows}
        assert set(by) == {"baseline_eval", "linear_probe", "full_finetune"}
        assert by["linear_probe"].body_unchanged is True
        assert by["baseline_eval"].train_report is None and by["baseline_eval"].seconds < 1e-3
        assert by["full_finetune"].train_report.learning_rate == pytest.approx(1e-4)
        assert by["linear_probe"].train_report.learning_rate == 1e-2
        assert 0 in res.pretrain
        recs = res.records()
        assert len(recs) == 6 and recs[0]["Model"] == "MLP_baseline_eval"

    def test_lookback_mismatch(self, small_dataset):
        from pifcast.neural import build

        tp = parse_config(TransferCommand, {"source": {"checkpoint": "x"}, "target": DATASET})
        with pytest.raises(E.ExperimentError):
            E.transfer_one(tp, 0, build("MLP", 2000, 7), small_dataset)

    def test_missing_checkpoint(self, tmp_path):
        tp = parse_config(TransferCommand, {"source": {"checkpoint": "nope.ckpt"}, "target": DATASET})
        with pytest.raises(E.ExperimentError):
            E.run_transfer(tp, tmp_path)
