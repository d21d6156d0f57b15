import math

import numpy as np
import pytest

from pifcast import autodiff as ad
from pifcast import losses as L
from pifcast.autodiff import Tape


def vec(t, x):
    return t.leaf(np.asarray(x, dtype=np.float64))


def loop_mse(p, t):
    return sum((a - b) ** 2 for a, b in zip(p, t)) / len(p)


class TestMse:
    def test_zero(self):
        t = Tape()
        assert L.mse(vec(t, [1.0, 2.0]), [1.0, 2.0]).item() == 0.0

    def test_unit(self):
        t = Tape()
        assert L.mse(vec(t, [1.0]), [0.0]).item() == 1.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        p, y = rng.normal(size=7), rng.normal(size=7)
        assert L.mse(vec(Tape(), p), y).item() == pytest.approx(loop_mse(p, y), abs=1e-12)

    def test_empty(self):
        with pytest.raises(L.LossError):
            L.mse(vec(Tape(), np.zeros(0)), np.zeros(0))


class TestFixed:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.p, self.y, self.q = rng.normal(size=9), rng.normal(size=9), rng.normal(size=9)

    def test_endpoints(self):
        t = Tape()
        pred = vec(t, self.p)
        assert L.fixed_loss(pred, self.y, self.q, 0.0).item() == pytest.approx(loop_mse(self.p, self.y), abs=1e-12)
        assert L.fixed_loss(pred, self.y, self.q, 1.0).item() == pytest.approx(loop_mse(self.p, self.q), abs=1e-12)

    def test_arithmetic(self):
        # L_data = 2 and L_PI = 4 with a single sample
        t = Tape()
        pred = vec(t, [0.0])
        assert L.fixed_loss(pred, [math.sqrt(2)], [2.0], L.FixedWeight(0.5)).item() == pytest.approx(3.0)

    def test_linear_in_components(self):
        t = Tape()
        pred = vec(t, self.p)
        ld, lp = loop_mse(self.p, self.y), loop_mse(self.p, self.q)
        for lam in L.LAMBDA_GRID:
            assert L.fixed_loss(pred, self.y, self.q, lam).item() == pytest.approx((1 - lam) * ld + lam * lp,
                                                                                   abs=1e-12)

    @pytest.mark.parametrize("lam", [-0.1, 1.1])
    def test_lambda_range(self, lam):
        with pytest.raises(L.LossError):
            L.FixedWeight(lam)


class TestUncertainty:
    def test_neutral_start(self):
        t = Tape()
        pred = vec(t, [1.0])
        assert L.uncertainty_loss(pred, [0.0], [2.0], 0.0, 0.0).item() == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("c", [0.04, 1.0, 2.5])
    def test_stationary_at_sqrt_loss(self, c):
        # one sample with squared residual c for both tasks
        t = Tape()
        pred = vec(t, [0.0])
        ls = t.leaf([0.5 * math.log(c), 0.5 * math.log(c)])
        loss = L.uncertainty_loss(pred, [math.sqrt(c)], [-math.sqrt(c)], ls[0], ls[1])
        (g,) = t.grad(loss, [ls])
        assert np.max(np.abs(g)) < 1e-8

    def test_doubling_sigma(self):
        ld = 0.8
        t = Tape()
        pred = vec(t, [0.0])
        before = L.uncertainty_loss(pred, [math.sqrt(ld)], [0.0], 0.0, 0.0).item()
        after = L.uncertainty_loss(pred, [math.sqrt(ld)], [0.0], math.log(2.0), 0.0).item()
        assert after - before == pytest.approx(-ld * 3 / 8 + math.log(2.0), abs=1e-12)

    def test_params_helper(self):
        up = L.UncertaintyParams()
        assert up.sigmas == (1.0, 1.0)
        up.set_array(np.array([math.log(2.0), 0.0]))
        assert up.sigmas[0] == pytest.approx(2.0)


class TestRba:
    def test_eta_one_copies_residual(self):
        st = L.RbaState.zeros(3, eta=1.0)
        new = L.rba_update(st, [0, 2], np.array([1.0, -2.0]), np.array([0.0, 0.0]), np.array([0.5, 1.0]))
        np.testing.assert_array_equal(new.lambda_data, [1.0, 0.0, 2.0])
        np.testing.assert_array_equal(new.lambda_pi, [0.5, 0.0, 3.0])

    def test_eta_zero_rejected(self):
        with pytest.raises(L.LossError):
            L.RbaState.zeros(3, eta=0.0)

    def test_ema_arithmetic(self):
        st = L.RbaState(np.array([0.5]), np.array([0.5]), 0.01)
        new = L.rba_update(st, [0], np.array([1.0]), np.array([0.0]), np.array([0.0]))
        assert new.lambda_data[0] == pytest.approx(0.505, abs=1e-15)

    def test_id_out_of_range(self):
        with pytest.raises(L.LossError):
            L.RbaState.zeros(3).weights([3])

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        st = L.RbaState(rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000))
        wd, wp = st.weights(np.arange(1000))
        assert np.all((wd >= 0) & (wd <= 1) & (wp >= 0) & (wp <= 1))
        assert np.max(np.abs(wd + wp - 1.0)) <= 2 * np.finfo(float).eps

    def test_zero_fallback(self):
        wd, wp = L.RbaState.zeros(4).weights(np.arange(4))
        assert wd.tolist() == wp.tolist() == [0.5] * 4

    def test_equal_ema_matches_fixed_half(self):
        rng = np.random.default_rng(3)
        lam = rng.uniform(0.1, 2.0, size=8)
        st = L.RbaState(lam, lam.copy())
        p, y, q = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
        t = Tape()
        pred = vec(t, p)
        a = L.rba_loss(st, np.arange(8), pred, y, q).item()
        b = L.fixed_loss(pred, y, q, 0.5).item()
        assert abs(a - b) <= 1e-12

    def test_identical_targets_reduce_to_mse(self):
        rng = np.random.default_rng(4)
        st = L.RbaState(rng.uniform(0, 1, 6), rng.uniform(0, 1, 6))
        p, y = rng.normal(size=6), rng.normal(size=6)
        t = Tape()
        pred = vec(t, p)
        assert L.rba_loss(st, np.arange(6), pred, y, y).item() == pytest.approx(L.mse(pred, y).item(), abs=1e-12)

    def test_ema_bounded(self):
        rng = np.random.default_rng(5)
        st = L.RbaState(rng.uniform(0, 0.3, 10), rng.uniform(0, 0.3, 10), eta=0.2)
        R = 0.7
        for _ in range(50):
            ids = rng.choice(10, size=4, replace=False)
            p = rng.uniform(-R / 2, R / 2, size=4)
            st = L.rba_update(st, ids, p, rng.uniform(-R / 2, R / 2, size=4), rng.uniform(-R / 2, R / 2, size=4))
        assert st.lambda_data.max() <= max(0.3, R) and st.lambda_pi.max() <= max(0.3, R)

    def test_weights_are_constants(self):
        # the gradient equals the weighted-MSE gradient with the weights frozen
        rng = np.random.default_rng(6)
        st = L.RbaState(rng.uniform(0.1, 1, 5), rng.uniform(0.1, 1, 5))
        wd, wp = st.weights(np.arange(5))
        p, y, q = rng.normal(size=5), rng.normal(size=5), rng.normal(size=5)
        t = Tape()
        pred = vec(t, p)
        (g,) = t.grad(L.rba_loss(st, np.arange(5), pred, y, q), [pred])
        np.testing.assert_allclose(g, 2 * (wd * (p - y) + wp * (p - q)) / 5, atol=1e-14)


class TestConfig:
    def test_suffixes(self):
        assert [L.LossConfig(s).suffix for s in L.STRATEGIES] == ["", "_fixed", "_uncertainty", "_RBA"]

    def test_rejects_unknown(self):
        with pytest.raises(L.LossError):
            L.LossConfig("magic")


class TestModelGradients:
    @pytest.mark.parametrize("strategy", L.STRATEGIES)
    def test_mlp_all_strategies(self, strategy):
        from gradsuite import max_gradient_error

        err, count = max_gradient_error("MLP", strategy)
        assert count <= 500 and err < 1e-4
