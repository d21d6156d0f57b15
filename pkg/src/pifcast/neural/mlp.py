from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import NeuralModel, uniform_init


class MLP(NeuralModel):
    """Two tanh hidden layers of equal width over the flattened window."""

    family = "MLP"

    @property
    def hidden_width(self) -> int:
        return self.hparams["width"]

    def init_params(self, rng):
        L, h = self.lookback, self.hparams["width"]
        return {
            "l1.w": uniform_init(rng, (L, h), L),
            "l1.b": uniform_init(rng, (h,), L),
            "l2.w": uniform_init(rng, (h, h), h),
            "l2.b": uniform_init(rng, (h,), h),
        }

    def body(self, tape, P, X):
        x = tape.const(X)
        h = ad.tanh(x @ P["l1.w"] + P["l1.b"])
        return ad.tanh(h @ P["l2.w"] + P["l2.b"])

    @classmethod
    def param_count(cls, lookback, width):
        return lookback * width + width + width * width + width + width + 1

    @classmethod
    def candidates(cls, lookback, target):
        w = 1
        while True:
            yield {"width": w}
            if cls.param_count(lookback, w) > 2 * target:
                return
            w += 1
