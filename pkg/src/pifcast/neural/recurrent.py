"""Recurrent families: Elman RNN, LSTM and Long Expressive Memory (LEM).

The window is fed one scalar per step; the final hidden state is the
representation passed to the head.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import NeuralModel, uniform_init


def _width_candidates(cls, lookback, target):
    w = 1
    while True:
        yield {"width": w}
        if cls.param_count(lookback, w) > 2 * target:
            return
        w += 1


class RNN(NeuralModel):
    family = "RNN"

    @property
    def hidden_width(self):
        return self.hparams["width"]

    def init_params(self, rng):
        h = self.hidden_width
        return {
            "rnn.wx": uniform_init(rng, (1, h), 1),
            "rnn.wh": uniform_init(rng, (h, h), h),
            "rnn.b": uniform_init(rng, (h,), h),
        }

    def body(self, tape, P, X):
        h = None
        for t in range(X.shape[1]):
            z = tape.const(X[:, t:t + 1]) @ P["rnn.wx"] + P["rnn.b"]
            if h is not None:
                z = z + h @ P["rnn.wh"]
            h = ad.tanh(z)
        return h

    @classmethod
    def param_count(cls, lookback, width):
        return width + width * width + width + width + 1

    candidates = classmethod(_width_candidates)


class LSTM(NeuralModel):
    """Standard gated cell; gate blocks ordered input, forget, cell, output."""

    family = "LSTM"

    @property
    def hidden_width(self):
        return self.hparams["width"]

    def init_params(self, rng):
        h = self.hidden_width
        return {
            "lstm.wx": uniform_init(rng, (1, 4 * h), h),
            "lstm.wh": uniform_init(rng, (h, 4 * h), h),
            "lstm.b": uniform_init(rng, (4 * h,), h),
        }

    def body(self, tape, P, X):
        n = self.hidden_width
        h = c = None
        for t in range(X.shape[1]):
            z = tape.const(X[:, t:t + 1]) @ P["lstm.wx"] + P["lstm.b"]
            if h is not None:
                z = z + h @ P["lstm.wh"]
            i = ad.sigmoid(z[:, 0:n])
            f = ad.sigmoid(z[:, n:2 * n])
            g = ad.tanh(z[:, 2 * n:3 * n])
            o = ad.sigmoid(z[:, 3 * n:4 * n])
            c = i * g if c is None else f * c + i * g
            h = o * ad.tanh(c)
        return h

    @classmethod
    def param_count(cls, lookback, width):
        return 4 * width + 4 * width * width + 4 * width + width + 1

    candidates = classmethod(_width_candidates)


class LEM(NeuralModel):
    """Long Expressive Memory cell with base step 1.

    Per step, with input u and states (y, z):
        dt1 = sigmoid(W1 y + V1 u + b1)
        dt2 = sigmoid(W2 y + V2 u + b2)
        z   = (1 - dt1) * z + dt1 * tanh(Wz y + Vz u + bz)
        y   = (1 - dt2) * y + dt2 * tanh(Wy z + Vy u + by)
    The learnable gates dt1, dt2 set a per-unit time scale.  The first three
    maps share one fused weight block over y; the last reads the new z.
    """

    family = "LEM"

    @property
    def hidden_width(self):
        return self.hparams["width"]

    def init_params(self, rng):
        h = self.hidden_width
        return {
            "lem.vx": uniform_init(rng, (1, 3 * h), h),
            "lem.wy": uniform_init(rng, (h, 3 * h), h),
            "lem.b": uniform_init(rng, (3 * h,), h),
            "lem.vyx": uniform_init(rng, (1, h), h),
            "lem.wz": uniform_init(rng, (h, h), h),
            "lem.by": uniform_init(rng, (h,), h),
        }

    def body(self, tape, P, X):
        n = self.hidden_width
        B = X.shape[0]
        y = tape.const(np.zeros((B, n)))
        z = tape.const(np.zeros((B, n)))
        for t in range(X.shape[1]):
            u = tape.const(X[:, t:t + 1])
            a = u @ P["lem.vx"] + y @ P["lem.wy"] + P["lem.b"]
            dt1 = ad.sigmoid(a[:, 0:n])
            dt2 = ad.sigmoid(a[:, n:2 * n])
            z = (1.0 - dt1) * z + dt1 * ad.tanh(a[:, 2 * n:3 * n])
            y = (1.0 - dt2) * y + dt2 * ad.tanh(z @ P["lem.wz"] + u @ P["lem.vyx"] + P["lem.by"])
        return y

    @classmethod
    def param_count(cls, lookback, width):
        return 3 * width + 3 * width * width + 3 * width + width + width * width + width + width + 1

    candidates = classmethod(_width_candidates)
