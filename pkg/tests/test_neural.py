import numpy as np
import pytest

from pifcast.autodiff import Tape
from pifcast.losses import STRATEGIES
from pifcast.neural import (DESK_TIERS, FAMILIES, InfeasibleTierError, ModelError, SizeTier, build,
                            load_checkpoint, predict_series, save_checkpoint, select_hparams)
from pifcast.neural.kan import bspline_basis, chebyshev_features, greville, spline_knots

from fdcheck import central_diff
from gradsuite import TINY_LOOKBACK, TINY_TIER, max_gradient_error

LOOKBACK = 50


class TestParity:
    @pytest.mark.parametrize("tier", DESK_TIERS)
    def test_within_tolerance_and_spread(self, tier):
        counts = {f: build(f, tier, LOOKBACK).parameter_count() for f in FAMILIES}
        for f, n in counts.items():
            assert abs(n - tier) <= 0.05 * tier, (f, n)
        spread = (max(counts.values()) - min(counts.values())) / tier
        assert spread <= 0.10

    def test_tiny_tier_feasible_everywhere(self):
        for f in FAMILIES:
            assert abs(build(f, TINY_TIER, TINY_LOOKBACK).parameter_count() - TINY_TIER) <= 0.05 * TINY_TIER

    def test_infeasible_tier(self):
        with pytest.raises(InfeasibleTierError):
            build("LSTM", 10, LOOKBACK)

    def test_tier_validation(self):
        with pytest.raises(ModelError):
            SizeTier(0)
        with pytest.raises(ModelError):
            SizeTier(100, tolerance=0.2)

    def test_unknown_family(self):
        with pytest.raises(ModelError):
            build("GRU", 2000, LOOKBACK)

    def test_selection_deterministic(self):
        assert select_hparams("KAN", 8000, LOOKBACK) == select_hparams("KAN", 8000, LOOKBACK)


@pytest.mark.parametrize("family", FAMILIES)
class TestCommon:
    def test_seed_determinism(self, family):
        a = build(family, TINY_TIER, TINY_LOOKBACK, seed=4)
        b = build(family, TINY_TIER, TINY_LOOKBACK, seed=4)
        c = build(family, TINY_TIER, TINY_LOOKBACK, seed=5)
        assert a.checksum() == b.checksum() != c.checksum()

    def test_output_shape_and_batch_consistency(self, family):
        m = build(family, TINY_TIER, TINY_LOOKBACK)
        X = np.random.default_rng(0).uniform(-1, 1, size=(9, TINY_LOOKBACK))
        full = m.predict(X)
        assert full.shape == (9,)
        np.testing.assert_allclose(m.predict(X, batch=2), full, atol=1e-13)
        np.testing.assert_allclose(m.forward_window(Tape(), X[3]).item(), full[3], atol=1e-13)

    def test_zero_head_outputs_zero(self, family):
        m = build(family, TINY_TIER, TINY_LOOKBACK)
        m.replace_head(np.zeros(m.hidden_width), 0.0)
        X = np.random.default_rng(1).uniform(-1, 1, size=(4, TINY_LOOKBACK))
        assert np.all(m.predict(X) == 0.0)

    def test_replace_head_freezes_body(self, family):
        m = build(family, TINY_TIER, TINY_LOOKBACK)
        m.replace_head(np.ones(m.hidden_width), 0.5)
        assert set(m.trainable_names()) == set(m.head_names)
        with pytest.raises(ModelError):
            m.replace_head(np.ones(m.hidden_width + 1))

    def test_window_length_checked(self, family):
        m = build(family, TINY_TIER, TINY_LOOKBACK)
        with pytest.raises(ModelError):
            m.predict(np.zeros((2, TINY_LOOKBACK + 1)))

    def test_checkpoint_roundtrip(self, family, tmp_path):
        m = build(family, TINY_TIER, TINY_LOOKBACK, seed=2)
        m.freeze_body()
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        X = np.random.default_rng(2).uniform(-1, 1, size=(5, TINY_LOOKBACK))
        assert back.predict(X).tobytes() == m.predict(X).tobytes()
        assert back.frozen == m.frozen and back.hparams == m.hparams

    @pytest.mark.parametrize("strategy", STRATEGIES)
    def test_gradient_vs_finite_differences(self, family, strategy):
        err, count = max_gradient_error(family, strategy)
        assert count <= 500
        assert err < 1e-4


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ModelError):
        load_checkpoint(p)


class TestSplines:
    def test_partition_of_unity_and_locality(self):
        knots = spline_knots(5)
        x = np.linspace(-1, 0.999, 101)
        B = bspline_basis(x, knots)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((B > 0).sum(axis=1) <= 4)
        assert np.all(B >= 0)

    def test_greville_reproduces_identity(self):
        knots = spline_knots(6)
        x = np.linspace(-1, 0.999, 57)
        np.testing.assert_allclose(bspline_basis(x, knots) @ greville(knots), x, atol=1e-12)

    def test_derivative_matches_fd(self):
        knots = spline_knots(4)
        x = np.array([-0.83, -0.31, 0.12, 0.66])
        _, dB = bspline_basis(x, knots, with_derivative=True)
        for k in range(dB.shape[1]):
            num = [central_diff(lambda v: bspline_basis(v, knots)[0, k], np.array([xi]))[0] for xi in x]
            np.testing.assert_allclose(dB[:, k], num, atol=1e-7)



class TestChebyshev:
    def test_first_orders(self):
        x = np.array([[-2.0, -0.3, 0.0, 0.7]])
        F = chebyshev_features(Tape().const(x), 3).numpy()
        s = np.tanh(x)
        n = x.shape[1]
        np.testing.assert_array_equal(F[:, :n], 1.0)
        np.testing.assert_allclose(F[:, n:2 * n], s, atol=1e-15)
        np.testing.assert_allclose(F[:, 2 * n:3 * n], 2 * s * s - 1, atol=1e-15)
        np.testing.assert_allclose(F[:, 3 * n:], 4 * s ** 3 - 3 * s, atol=1e-14)

    def test_bounded(self):
        x = np.linspace(-50, 50, 41)[None, :]
        assert np.max(np.abs(chebyshev_features(Tape().const(x), 5).numpy())) <= 1.0 + 1e-12


class TestTransformer:
    def test_causal(self):
        m = build("Transformer", TINY_TIER, TINY_LOOKBACK)
        w = np.random.default_rng(3).uniform(-1, 1, TINY_LOOKBACK)
        w2 = w.copy()
        w2[4:] += 0.5
        a = m.hidden_sequence(Tape(), w).numpy()
        b = m.hidden_sequence(Tape(), w2).numpy()
        np.testing.assert_array_equal(a[:4], b[:4])
        assert not np.allclose(a[4:], b[4:])

    def test_batched_body_equals_last_position(self):
        m = build("Transformer", TINY_TIER, TINY_LOOKBACK)
        X = np.random.default_rng(4).uniform(-1, 1, size=(3, TINY_LOOKBACK))
        for i in range(3):
            seq = m.hidden_sequence(Tape(), X[i]).numpy()
            hw, hb = m.params["head.w"], m.params["head.b"]
            assert m.predict(X)[i] == pytest.approx(seq[-1] @ hw + hb, abs=1e-12)


class TestRecurrentCausality:
    @pytest.mark.parametrize("family", ["RNN", "LSTM", "LEM"])
    def test_uses_whole_window(self, family):
        m = build(family, TINY_TIER, TINY_LOOKBACK)
        w = np.zeros((1, TINY_LOOKBACK))
        w2 = w.copy()
        w2[0, 0] = 1.0
        assert m.predict(w)[0] != m.predict(w2)[0]


def test_predict_series_in_celsius(small_dataset):
    m = build("MLP", 2000, small_dataset.lookback)
    out = predict_series(m, small_dataset)
    z = m.predict(small_dataset.X("test"))
    np.testing.assert_allclose(out, small_dataset.norm.invert(z), atol=1e-12)
    wrong = build("MLP", 400, small_dataset.lookback + 1)
    with pytest.raises(ModelError):
        predict_series(wrong, small_dataset)
