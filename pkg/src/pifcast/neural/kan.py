"""Kolmogorov-Arnold layers: cubic B-spline edges (KAN) and Chebyshev edges (cKAN).

Each layer output is a sum over inputs of learnable univariate edge
functions.  Basis features are laid out so a layer reduces to one matrix
product with the edge-coefficient matrix.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, TapeValue
from .base import NeuralModel, uniform_init

SPLINE_DEGREE = 3
GRID_RANGE = (-1.0, 1.0)
SPLINE_NOISE = 0.01


def spline_knots(grid_size: int, degree: int = SPLINE_DEGREE, lo: float = GRID_RANGE[0], hi: float = GRID_RANGE[1]) -> np.ndarray:
    """Uniform knots on [lo, hi] extended by ``degree`` knots on each side."""
    h = (hi - lo) / grid_size
    return lo + h * np.arange(-degree, grid_size + degree + 1)


def greville(knots: np.ndarray, degree: int = SPLINE_DEGREE) -> np.ndarray:
    """Coefficients that make the spline the identity on the core interval."""
    n = knots.size - degree - 1
    return np.array([knots[j + 1:j + degree + 1].mean() for j in range(n)])


def bspline_basis(x: np.ndarray, knots: np.ndarray, degree: int = SPLINE_DEGREE, with_derivative: bool = False):
    """Cox-de Boor recursion.  Returns ``(..., n_basis)`` values (and derivatives)."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    t = knots
    B = ((x >= t[:-1]) & (x < t[1:])).astype(np.float64)
    lower = B
    for k in range(1, degree + 1):
        lower = B
        left = (x - t[: -k - 1]) / (t[k:-1] - t[: -k - 1]) * B[..., :-1]
        right = (t[k + 1:] - x) / (t[k + 1:] - t[1:-k]) * B[..., 1:]
        B = left + right
    if not with_derivative:
        return B
    # derivative of degree-p bases from the degree-(p-1) ones
    p = degree
    a = p / (t[p:-1] - t[:-p - 1])
    b = p / (t[p + 1:] - t[1:-p])
    dB = a * lower[..., :-1] - b * lower[..., 1:]
    return B, dB


def spline_features(x: TapeValue, knots: np.ndarray) -> TapeValue:
    """Tape primitive: ``(B, n)`` inputs to ``(B, n * K)`` basis values.

    Column ``i * K + k`` holds basis ``k`` evaluated at input ``i``.
    """
    B, n = x.shape
    vals, ders = bspline_basis(x.value, knots, with_derivative=True)
    K = vals.shape[-1]

    def vjp(g):
        return ((g.reshape(B, n, K) * ders).sum(axis=-1),)

    return x.tape.record(vals.reshape(B, n * K), (x,), vjp)


def silu(x: TapeValue) -> TapeValue:
    return x * ad.sigmoid(x)


class KAN(NeuralModel):
    """Two KAN layers (lookback -> width -> width).

    Edge function: ``w_base * silu(x) + sum_k c_k B_k(x)`` with cubic
    B-splines on a uniform grid over [-1, 1].
    """

    family = "KAN"

    @property
    def hidden_width(self):
        return self.hparams["width"]

    @property
    def knots(self) -> np.ndarray:
        return spline_knots(self.hparams["grid"])

    def _layer_params(self, rng, prefix, n_in, n_out):
        knots = self.knots
        K = knots.size - SPLINE_DEGREE - 1
        ramp = greville(knots)
        scale = uniform_init(rng, (n_in, n_out), n_in)
        coef = scale[:, None, :] * ramp[None, :, None] + SPLINE_NOISE * rng.standard_normal((n_in, K, n_out))
        return {
            f"{prefix}.base": uniform_init(rng, (n_in, n_out), n_in),
            f"{prefix}.spline": coef.reshape(n_in * K, n_out),
        }

    def init_params(self, rng):
        h = self.hidden_width
        p = self._layer_params(rng, "kan1", self.lookback, h)
        p.update(self._layer_params(rng, "kan2", h, h))
        return p

    def layer(self, P, prefix, x: TapeValue) -> TapeValue:
        return silu(x) @ P[f"{prefix}.base"] + spline_features(x, self.knots) @ P[f"{prefix}.spline"]

    def body(self, tape, P, X):
        h = self.layer(P, "kan1", tape.const(X))
        return self.layer(P, "kan2", h)

    @classmethod
    def param_count(cls, lookback, width, grid):
        per_edge = grid + SPLINE_DEGREE + 1
        return per_edge * (lookback * width + width * width) + width + 1

    @classmethod
    def preference(cls, hparams):
        return abs(hparams["grid"] - 5)

    @classmethod
    def candidates(cls, lookback, target):
        for grid in range(3, 9):
            w = 1
            while True:
                yield {"width": w, "grid": grid}
                if cls.param_count(lookback, w, grid) > 2 * target:
                    break
                w += 1


def chebyshev_features(x: TapeValue, degree: int) -> TapeValue:
    """``(B, n)`` inputs to ``[T_0(s) | T_1(s) | ... | T_D(s)]`` with s = tanh(x).

    Column ``d * n + i`` holds ``T_d`` at input ``i``.
    """
    s = ad.tanh(x)
    terms = [x.tape.const(np.ones(x.shape)), s]
    for _ in range(2, degree + 1):
        terms.append(2.0 * s * terms[-1] - terms[-2])
    return ad.concat(terms[: degree + 1], axis=1)


class CKAN(NeuralModel):
    """Two Chebyshev KAN layers; inputs are tanh-squashed into [-1, 1]."""

    family = "cKAN"

    @property
    def hidden_width(self):
        return self.hparams["width"]

    def _layer_params(self, rng, prefix, n_in, n_out):
        D = self.hparams["degree"]
        coef = np.zeros(((D + 1) * n_in, n_out))
        coef[n_in:2 * n_in] = uniform_init(rng, (n_in, n_out), n_in)
        return {f"{prefix}.cheb": coef}

    def init_params(self, rng):
        h = self.hidden_width
        p = self._layer_params(rng, "ckan1", self.lookback, h)
        p.update(self._layer_params(rng, "ckan2", h, h))
        return p

    def layer(self, P, prefix, x: TapeValue) -> TapeValue:
        return chebyshev_features(x, self.hparams["degree"]) @ P[f"{prefix}.cheb"]

    def body(self, tape, P, X):
        h = self.layer(P, "ckan1", tape.const(X))
        return self.layer(P, "ckan2", h)

    @classmethod
    def param_count(cls, lookback, width, degree):
        return (degree + 1) * (lookback * width + width * width) + width + 1

    @classmethod
    def preference(cls, hparams):
        return abs(hparams["degree"] - 3)

    @classmethod
    def candidates(cls, lookback, target):
        for degree in range(2, 6):
            w = 1
            while True:
                yield {"width": w, "degree": degree}
                if cls.param_count(lookback, w, degree) > 2 * target:
                    break
                w += 1
