from dataclasses import replace

import numpy as np
import pytest

from pifcast.data import RawSeries, prepare
from pifcast.losses import LossConfig
from pifcast.metrics import rmse
from pifcast.neural import FAMILIES, build
from pifcast.training import (Adam, DivergenceError, TrainConfig, TrainReport, TrainingError, default_lr,
                              pick_lambda, search_lambda, train)


def quick(**kw):
    base = dict(max_epochs=12, patience=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def mlp(ds, seed=0):
    return build("MLP", 2000, ds.lookback, seed)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(patience=12), dict(patience=0), dict(batch_size=0), dict(lr=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(TrainingError):
            quick(**kw)

    def test_default_learning_rates(self):
        assert default_lr("Transformer") == 5e-4
        assert default_lr("LSTM") == 1e-3
        assert quick(lr=0.1).learning_rate("Transformer") == 0.1


class TestAdam:
    def test_first_step_is_normalized(self):
        p = {"w": np.array([1.0, -2.0, 0.5])}
        g = {"w": np.array([0.3, -4.0, 1e-3])}
        Adam(0.01).step(p, g)
        expect = np.array([1.0, -2.0, 0.5]) - 0.01 * g["w"] / (np.abs(g["w"]) + 1e-8)
        np.testing.assert_allclose(p["w"], expect, rtol=0, atol=1e-15)

    def test_minimizes_quadratic(self):
        p = {"x": np.array([3.0])}
        opt = Adam(0.1)
        for _ in range(500):
            opt.step(p, {"x": 2 * (p["x"] - 1.0)})
        assert abs(p["x"][0] - 1.0) < 1e-3


class TestTrain:
    def test_constant_series_converges(self):
        raw = RawSeries(np.arange(300) * 60.0, np.full(300, 5.0))
        ds = prepare(raw, 6)
        model, rep = train(build("MLP", 400, 6, 0), ds, TrainConfig(max_epochs=200, patience=20, lr=1e-2))
        assert rep.best_val_rmse < 1e-3

    @pytest.mark.parametrize("family", FAMILIES)
    def test_linear_toy_loss_halves(self, family):
        raw = RawSeries(np.arange(400) * 60.0, np.linspace(-20.0, 20.0, 400))
        ds = prepare(raw, 6)
        model = build(family, 400, 6, 0)
        initial = float(np.mean((model.predict(ds.X("train")) - ds.y("train")) ** 2))
        _, rep = train(model, ds, TrainConfig(max_epochs=10, patience=9, batch_size=16))
        assert rep.train_loss[-1] <= 0.5 * initial

    def test_loss_decreases(self, small_dataset):
        _, rep = train(mlp(small_dataset), small_dataset, quick())
        assert rep.train_loss[-1] < rep.train_loss[0]

    def test_best_epoch_restored(self, small_dataset):
        model, rep = train(mlp(small_dataset), small_dataset, quick(max_epochs=20, patience=3, lr=3e-2))
        assert rep.best_epoch == int(np.argmin(rep.val_rmse)) + 1
        assert rep.epochs_run <= 20
        if rep.epochs_run < 20:
            assert rep.epochs_run - rep.best_epoch == 3
        val = rmse(model.predict(small_dataset.X("val")), small_dataset.y("val"))
        assert val == rep.best_val_rmse
        assert model.checksum() == rep.checksum

    def test_deterministic(self, small_dataset):
        _, a = train(mlp(small_dataset), small_dataset, quick(loss=LossConfig("rba")))
        _, b = train(mlp(small_dataset), small_dataset, quick(loss=LossConfig("rba")))
        assert a.checksum == b.checksum and a.val_rmse == b.val_rmse and a.train_loss == b.train_loss

    def test_seed_changes_shuffle(self, small_dataset):
        _, a = train(mlp(small_dataset), small_dataset, quick(seed=0))
        _, b = train(mlp(small_dataset), small_dataset, quick(seed=1))
        assert a.checksum != b.checksum

    def test_uncertainty_reports_sigmas(self, small_dataset):
        _, rep = train(mlp(small_dataset), small_dataset, quick(loss=LossConfig("uncertainty")))
        assert rep.sigmas is not None and all(s > 0 for s in rep.sigmas)
        assert rep.sigmas != (1.0, 1.0)

    def test_frozen_body_untouched(self, small_dataset):
        m = mlp(small_dataset)
        body = m.body_checksum()
        m.replace_head(np.zeros(m.hidden_width))
        train(m, small_dataset, quick())
        assert m.body_checksum() == body
        assert np.any(m.params["head.w"] != 0)

    def test_divergence(self, small_dataset):
        with pytest.raises(DivergenceError) as info:
            # a huge step sends the log-sigmas far enough to overflow exp
            train(mlp(small_dataset), small_dataset, quick(lr=1e3, loss=LossConfig("uncertainty")))
        assert info.value.last_finite_epoch == 0

    def test_input_errors(self, small_dataset):
        with pytest.raises(TrainingError):
            train(build("MLP", 2000, 7), small_dataset, quick())
        with pytest.raises(TrainingError):
            train(mlp(small_dataset), small_dataset, quick(loss=LossConfig("fixed")))
        no_prior = replace(small_dataset, prior=None)
        with pytest.raises(TrainingError):
            train(mlp(small_dataset), no_prior, quick(loss=LossConfig("rba")))


class TestReport:
    def test_json_and_curves(self, small_dataset, tmp_path):
        _, rep = train(mlp(small_dataset), small_dataset, quick(max_epochs=4, patience=2))
        assert TrainReport.from_json(rep.to_json()) == rep
        lines = rep.curves_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_rmse"
        assert len(lines) == rep.epochs_run + 1
        rep.save(tmp_path / "r.json", tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text() == rep.curves_csv()

    def test_best_epoch_bounds(self):
        with pytest.raises(TrainingError):
            TrainReport("MLP", "data_only", None, 2, 3, [1, 1], [1, 1], 0.0, "", 1e-3)


class TestLambdaSearch:
    def test_pick_ties_to_smaller(self):
        assert pick_lambda([(0.0, 0.5), (0.3, 0.2), (0.6, 0.2)]) == 0.3
        with pytest.raises(TrainingError):
            pick_lambda([])

    def test_offset_prior_selects_zero(self, small_dataset):
        ds = replace(small_dataset, prior=small_dataset.prior + 10.0 / small_dataset.norm.scale)
        cfg = TrainConfig(max_epochs=40, patience=10, lr=1e-2)
        best, table = search_lambda(lambda: mlp(ds), ds, config=cfg)
        assert best == 0.0
        assert [lam for lam, _ in table] == [round(0.1 * k, 1) for k in range(10)]

    def test_perfect_prior_selects_grid_max(self, small_dataset):
        ds = small_dataset
        rng = np.random.default_rng(0)
        tg = ds.targets.copy()
        tr, va = ds.split_slice("train"), ds.split_slice("val")
        tg[tr] = ds.prior[tr] + rng.normal(0, 0.3, ds.train_end)
        tg[va] = ds.prior[va]
        noisy = replace(ds, targets=tg)
        cfg = TrainConfig(max_epochs=30, patience=5, lr=1e-3)
        best, _ = search_lambda(lambda: mlp(ds), noisy, config=cfg)
        assert best == 0.9

    def test_table_consistent_with_runs(self, small_dataset):
        grid = (0.5, 0.0, 0.2)
        search = search_lambda(lambda: mlp(small_dataset), small_dataset, grid, quick(max_epochs=5, patience=2),
                               keep_models=True)
        assert [lam for lam, _ in search.table] == [0.0, 0.2, 0.5]
        for lam, v in search.table:
            model, rep = search.runs[lam]
            assert rep.lam == lam and rep.best_val_rmse == v
            assert rmse(model.predict(small_dataset.X("val")), small_dataset.y("val")) == v
        assert search.best == pick_lambda(search.table)

    def test_empty_grid(self, small_dataset):
        with pytest.raises(TrainingError):
            search_lambda(lambda: mlp(small_dataset), small_dataset, ())
