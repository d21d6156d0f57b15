"""Single-block causal Transformer with last-token readout.

Each scalar reading is embedded affinely and summed with a learned position
vector.  Under the causal mask the last position may attend to every
position, and only its output reaches the head, so the batched ``body``
computes attention for the final query alone.  ``hidden_sequence`` runs the
full masked attention over every position of one window.
"""
from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from .base import NeuralModel, uniform_init

HEADS = 2
MASK = -1e9


class Transformer(NeuralModel):
    family = "Transformer"

    @property
    def hidden_width(self):
        return self.hparams["d_model"]

    def init_params(self, rng):
        d, f, L = self.hparams["d_model"], self.hparams["d_ff"], self.lookback
        if d % HEADS:
            raise ValueError(f"d_model must be divisible by {HEADS}")
        p = {
            "emb.w": uniform_init(rng, (1, d), 1),
            "emb.b": uniform_init(rng, (d,), 1),
            "pos": rng.uniform(-0.1, 0.1, size=(L, d)),
        }
        for name in ("q", "k", "v", "o"):
            p[f"attn.{name}.w"] = uniform_init(rng, (d, d), d)
            p[f"attn.{name}.b"] = uniform_init(rng, (d,), d)
        p["ff1.w"] = uniform_init(rng, (d, f), d)
        p["ff1.b"] = uniform_init(rng, (f,), d)
        p["ff2.w"] = uniform_init(rng, (f, d), f)
        p["ff2.b"] = uniform_init(rng, (d,), f)
        return p

    def _ffn(self, P, h):
        return h + ad.relu(h @ P["ff1.w"] + P["ff1.b"]) @ P["ff2.w"] + P["ff2.b"]

    def body(self, tape, P, X):
        B, L = X.shape
        d = self.hparams["d_model"]
        dh = d // HEADS
        # one-hot helpers: token rows per sample, and position tiling
        rep = np.kron(np.eye(B), np.ones((L, 1)))
        R = tape.const(rep)
        Rt = tape.const(rep.T)
        tile = tape.const(np.tile(np.eye(L), (B, 1)))
        E = tape.const(X.reshape(B * L, 1)) @ P["emb.w"] + P["emb.b"] + tile @ P["pos"]
        K = E @ P["attn.k.w"] + P["attn.k.b"]
        V = E @ P["attn.v.w"] + P["attn.v.b"]
        last = E[np.arange(B) * L + (L - 1)]
        Q = last @ P["attn.q.w"] + P["attn.q.b"]
        prod = (R @ Q) * K
        ones = tape.const(np.ones((1, dh)))
        heads = []
        for j in range(HEADS):
            cols = slice(j * dh, (j + 1) * dh)
            scores = ad.reshape(ad.sum(prod[:, cols], axis=1), (B, L)) * (1.0 / math.sqrt(dh))
            a = ad.reshape(ad.softmax(scores), (B * L, 1))
            heads.append(Rt @ ((a @ ones) * V[:, cols]))
        attn = ad.concat(heads, axis=1) @ P["attn.o.w"] + P["attn.o.b"]
        return self._ffn(P, last + attn)

    def hidden_sequence(self, tape, window, P=None):
        """Block output at every position of one window, shape ``(L, d)``."""
        P = self.leaves(tape) if P is None else P
        x = np.asarray(window, dtype=np.float64).reshape(-1)
        L = x.size
        d = self.hparams["d_model"]
        dh = d // HEADS
        E = tape.const(x.reshape(L, 1)) @ P["emb.w"] + P["emb.b"] + P["pos"]
        Q = E @ P["attn.q.w"] + P["attn.q.b"]
        K = E @ P["attn.k.w"] + P["attn.k.b"]
        V = E @ P["attn.v.w"] + P["attn.v.b"]
        mask = tape.const(np.triu(np.full((L, L), MASK), k=1))
        heads = []
        for j in range(HEADS):
            cols = slice(j * dh, (j + 1) * dh)
            s = Q[:, cols] @ K[:, cols].T * (1.0 / math.sqrt(dh)) + mask
            heads.append(ad.softmax(s) @ V[:, cols])
        attn = ad.concat(heads, axis=1) @ P["attn.o.w"] + P["attn.o.b"]
        return self._ffn(P, E + attn)

    @classmethod
    def param_count(cls, lookback, d_model, d_ff):
        d, f = d_model, d_ff
        return 4 * d * d + (lookback + 8) * d + (2 * d + 1) * f + 1

    @classmethod
    def preference(cls, hparams):
        return abs(hparams["d_ff"] - 2 * hparams["d_model"]) / hparams["d_model"]

    @classmethod
    def candidates(cls, lookback, target):
        d = HEADS
        while True:
            base = cls.param_count(lookback, d, 0)
            if base > 2 * target:
                return
            per_ff = 2 * d + 1
            f0 = max(1, round((target - base) / per_ff))
            for f in sorted({max(1, f0 - 1), f0, f0 + 1}):
                if f <= 4 * d:
                    yield {"d_model": d, "d_ff": f}
            yield {"d_model": d, "d_ff": min(4 * d, max(1, f0))}
            d += HEADS
