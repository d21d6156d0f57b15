"""Shared machinery for the neural forecasters.

A model owns an ordered mapping of named float64 parameter arrays.  The body
maps a batch of windows ``(B, lookback)`` to a hidden representation
``(B, hidden)``; the head is an affine map from that representation to one
normalized forecast per window.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, TapeValue
from ..data import rng_for

HEAD_W = "head.w"
HEAD_B = "head.b"
PREDICT_BATCH = 128
CHECKPOINT_MAGIC = b"PIFCKPT1"


class ModelError(ValueError):
    pass


class InfeasibleTierError(ModelError):
    pass


@dataclass(frozen=True)
class SizeTier:
    target: int
    tolerance: float = 0.05

    def __post_init__(self) -> None:
        if self.target < 1:
            raise ModelError("tier target must be positive")
        if not 0 < self.tolerance <= 0.05:
            raise ModelError("tier tolerance must lie in (0, 0.05]")

    def accepts(self, count: int) -> bool:
        return abs(count - self.target) <= self.tolerance * self.target


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class NeuralModel:
    """Base class; subclasses define ``param_shapes``, ``init_params`` and ``body``."""

    family: ClassVar[str] = ""

    def __init__(self, lookback: int, seed: int = 0, tier: int | None = None, **hparams) -> None:
        if lookback < 1:
            raise ModelError("lookback must be positive")
        self.lookback = int(lookback)
        self.seed = int(seed)
        self.tier = tier
        self.hparams = {k: int(v) for k, v in hparams.items()}
        self.frozen: set[str] = set()
        rng = rng_for(seed, 7)
        self.params: dict[str, np.ndarray] = {}
        for name, arr in self.init_params(rng).items():
            self.params[name] = np.asarray(arr, dtype=np.float64)
        h = self.hidden_width
        self.params[HEAD_W] = uniform_init(rng, (h,), h)
        self.params[HEAD_B] = uniform_init(rng, (), h)
        expected = self.param_count(self.lookback, **self.hparams)
        if self.parameter_count() != expected:
            raise AssertionError(f"{self.family}: {self.parameter_count()} params, formula says {expected}")

    # subclass API -----------------------------------------------------------
    @property
    def hidden_width(self) -> int:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def body(self, tape: Tape, P: dict[str, TapeValue], X: np.ndarray) -> TapeValue:
        raise NotImplementedError

    @classmethod
    def param_count(cls, lookback: int, **hparams) -> int:
        raise NotImplementedError

    @classmethod
    def candidates(cls, lookback: int, target: int) -> Iterator[dict]:
        raise NotImplementedError

    @classmethod
    def preference(cls, hparams: dict) -> float:
        """Rank among in-tolerance candidates; lower is preferred."""
        return 0.0

    # parameters -------------------------------------------------------------
    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    @property
    def head_names(self) -> tuple[str, str]:
        return HEAD_W, HEAD_B

    @property
    def body_names(self) -> list[str]:
        return [n for n in self.params if n not in (HEAD_W, HEAD_B)]

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if n not in self.frozen]

    def get_flat(self, names: list[str] | None = None) -> np.ndarray:
        names = list(self.params) if names is None else names
        return np.concatenate([self.params[n].reshape(-1) for n in names]) if names else np.zeros(0)

    def set_flat(self, flat: np.ndarray, names: list[str] | None = None) -> None:
        names = list(self.params) if names is None else names
        flat = np.asarray(flat, dtype=np.float64)
        total = sum(self.params[n].size for n in names)
        if flat.size != total:
            raise ModelError(f"flat vector has {flat.size} values, expected {total}")
        i = 0
        for n in names:
            a = self.params[n]
            self.params[n] = flat[i:i + a.size].reshape(a.shape).copy()
            i += a.size

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.params = {k: v.copy() for k, v in snap.items()}

    def checksum(self, names: list[str] | None = None) -> str:
        return hashlib.sha256(self.get_flat(names).astype("<f8").tobytes()).hexdigest()

    def body_checksum(self) -> str:
        return self.checksum(self.body_names)

    def freeze_body(self) -> None:
        self.frozen = set(self.body_names)

    def unfreeze(self) -> None:
        self.frozen = set()

    def replace_head(self, weight, bias: float = 0.0, freeze_body: bool = True) -> "NeuralModel":
        """Install a new affine head; by default only the head stays trainable."""
        w = np.asarray(weight, dtype=np.float64).reshape(-1)
        if w.size != self.hidden_width:
            raise ModelError(f"head weight has {w.size} entries, hidden width is {self.hidden_width}")
        self.params[HEAD_W] = w.copy()
        self.params[HEAD_B] = np.asarray(float(bias))
        if freeze_body:
            self.freeze_body()
        return self

    # forward ----------------------------------------------------------------
    def leaves(self, tape: Tape) -> dict[str, TapeValue]:
        return {n: tape.leaf(a, requires_grad=n not in self.frozen) for n, a in self.params.items()}

    def _check_window(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.lookback:
            raise ModelError(f"window length {X.shape[-1]} does not match lookback {self.lookback}")
        return X

    def forward(self, tape: Tape, X: np.ndarray, P: dict[str, TapeValue] | None = None) -> TapeValue:
        """Forecasts ``(B,)`` for windows ``X`` of shape ``(B, lookback)``."""
        X = self._check_window(X)
        P = self.leaves(tape) if P is None else P
        H = self.body(tape, P, X)
        return H @ P[HEAD_W] + P[HEAD_B]

    def forward_window(self, tape: Tape, window: np.ndarray, P: dict[str, TapeValue] | None = None) -> TapeValue:
        """Scalar forecast for one window."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 1:
            raise ModelError("a single window must be 1-D")
        return self.forward(tape, window, P)[0]

    def predict(self, X: np.ndarray, batch: int = PREDICT_BATCH) -> np.ndarray:
        """Normalized forecasts as a plain array."""
        X = self._check_window(X)
        out = []
        for i in range(0, X.shape[0], batch):
            tape = Tape()
            P = {n: tape.const(a) for n, a in self.params.items()}
            out.append(self.forward(tape, X[i:i + batch], P).numpy())
        return np.concatenate(out) if out else np.zeros(0)

    # serialization ----------------------------------------------------------
    def header(self) -> dict:
        return {"family": self.family, "lookback": self.lookback, "hyperparameters": self.hparams,
                "tier": self.tier, "seed": self.seed, "param_names": list(self.params),
                "param_shapes": [list(a.shape) for a in self.params.values()],
                "frozen": sorted(self.frozen)}


def save_checkpoint(model: NeuralModel, path: str | Path) -> None:
    """Magic, little-endian u64 header length, UTF-8 JSON header, float64 LE block."""
    head = json.dumps(model.header(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(model.get_flat().astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> NeuralModel:
    from . import FAMILY_CLASSES

    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n].decode("utf-8"))
    flat = np.frombuffer(blob[16 + n:], dtype="<f8").astype(np.float64)
    cls = FAMILY_CLASSES.get(header["family"])
    if cls is None:
        raise ModelError(f"unknown family {header['family']!r}")
    model = cls(header["lookback"], seed=header["seed"], tier=header["tier"], **header["hyperparameters"])
    if list(model.params) != header["param_names"]:
        raise ModelError("checkpoint parameter layout does not match the family definition")
    model.set_flat(flat)
    model.frozen = set(header.get("frozen", []))
    return model


def affine(X: TapeValue, W: TapeValue, b: TapeValue) -> TapeValue:
    return X @ W + b


def stack_rows(rows: list[TapeValue]) -> TapeValue:
    """Stack equal-length vectors into a matrix."""
    return ad.concat([ad.reshape(r, (1, r.shape[0])) for r in rows], axis=0)
