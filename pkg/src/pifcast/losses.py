"""Data-only and process-informed training losses on the autodiff tape.

``pred`` is a vector TapeValue of normalized forecasts; targets and priors
are plain arrays (or TapeValues) of the same length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import TapeValue

STRATEGIES = ("data_only", "fixed", "uncertainty", "rba")
DEFAULT_ETA = 0.01
LAMBDA_GRID = tuple(round(0.1 * k, 1) for k in range(10))


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    strategy: str = "data_only"
    lam: float | None = None
    eta: float = DEFAULT_ETA

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise LossError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise LossError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.eta <= 1.0:
            raise LossError(f"eta must lie in (0, 1], got {self.eta}")

    @property
    def suffix(self) -> str:
        return {"data_only": "", "fixed": "_fixed", "uncertainty": "_uncertainty", "rba": "_RBA"}[self.strategy]


def mse(pred: TapeValue, target) -> TapeValue:
    n = pred.shape[0] if pred.ndim else 1
    t = target.shape[0] if isinstance(target, TapeValue) else np.asarray(target).reshape(-1).size
    if n == 0:
        raise LossError("empty batch")
    if pred.ndim != 1 or t != n:
        raise LossError(f"pred/target length mismatch: {pred.shape} vs {t}")
    return ad.mean(ad.square(pred - target))


@dataclass(frozen=True)
class FixedWeight:
    lam: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise LossError(f"lambda must lie in [0, 1], got {self.lam}")


def fixed_loss(pred: TapeValue, y_true, y_pi, fw: FixedWeight | float) -> TapeValue:
    """(1 - lambda) * MSE(data) + lambda * MSE(prior)."""
    lam = fw.lam if isinstance(fw, FixedWeight) else FixedWeight(float(fw)).lam
    return (1.0 - lam) * mse(pred, y_true) + lam * mse(pred, y_pi)


@dataclass
class UncertaintyParams:
    """Learnable log-noise scales for the data and prior tasks, start at sigma=1."""

    log_sigma_data: float = 0.0
    log_sigma_pi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.log_sigma_data, self.log_sigma_pi])

    def set_array(self, v: np.ndarray) -> None:
        self.log_sigma_data, self.log_sigma_pi = float(v[0]), float(v[1])

    @property
    def sigmas(self) -> tuple[float, float]:
        return float(np.exp(self.log_sigma_data)), float(np.exp(self.log_sigma_pi))


def uncertainty_loss(pred: TapeValue, y_true, y_pi, log_sigma_data, log_sigma_pi) -> TapeValue:
    """L_data/(2 s_d^2) + L_pi/(2 s_pi^2) + log(s_d s_pi), with s = exp(log_sigma)."""
    tape = pred.tape
    lsd = log_sigma_data if isinstance(log_sigma_data, TapeValue) else tape.const(log_sigma_data)
    lsp = log_sigma_pi if isinstance(log_sigma_pi, TapeValue) else tape.const(log_sigma_pi)
    l_data = mse(pred, y_true)
    l_pi = mse(pred, y_pi)
    return 0.5 * ad.exp(-2.0 * lsd) * l_data + 0.5 * ad.exp(-2.0 * lsp) * l_pi + (lsd + lsp)


@dataclass(frozen=True)
class RbaState:
    """Per-sample EMA of absolute residuals for the data and prior terms."""

    lambda_data: np.ndarray
    lambda_pi: np.ndarray
    eta: float = DEFAULT_ETA

    def __post_init__(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise LossError(f"eta must lie in (0, 1], got {self.eta}")
        if self.lambda_data.shape != self.lambda_pi.shape or self.lambda_data.ndim != 1:
            raise LossError("lambda vectors must be 1-D with equal length")
        if np.any(self.lambda_data < 0) or np.any(self.lambda_pi < 0):
            raise LossError("lambda values must be nonnegative")

    @classmethod
    def zeros(cls, n: int, eta: float = DEFAULT_ETA) -> "RbaState":
        return cls(np.zeros(n), np.zeros(n), eta)

    def weights(self, ids) -> tuple[np.ndarray, np.ndarray]:
        """Normalized per-sample weights; (0.5, 0.5) where both EMAs are zero."""
        ids = self._ids(ids)
        ld, lp = self.lambda_data[ids], self.lambda_pi[ids]
        tot = ld + lp
        zero = tot == 0
        safe = np.where(zero, 1.0, tot)
        wd = np.where(zero, 0.5, ld / safe)
        wp = np.where(zero, 0.5, lp / safe)
        return wd, wp

    def _ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.intp).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.lambda_data.size):
            raise LossError(f"sample id out of range [0, {self.lambda_data.size})")
        return ids


def _detach(x) -> np.ndarray:
    return x.value if isinstance(x, TapeValue) else np.asarray(x, dtype=np.float64)


def rba_update(state: RbaState, ids, pred, y_true, y_pi) -> RbaState:
    """One EMA step on the selected samples using detached residuals."""
    ids = state._ids(ids)
    p = _detach(pred)
    eta = state.eta
    ld = state.lambda_data.copy()
    lp = state.lambda_pi.copy()
    ld[ids] = (1.0 - eta) * ld[ids] + eta * np.abs(p - _detach(y_true))
    lp[ids] = (1.0 - eta) * lp[ids] + eta * np.abs(p - _detach(y_pi))
    return RbaState(ld, lp, eta)


def rba_loss(state: RbaState, ids, pred: TapeValue, y_true, y_pi) -> TapeValue:
    """Batch mean of per-sample weighted squared residuals; weights are constants."""
    wd, wp = state.weights(ids)
    if wd.size != pred.shape[0]:
        raise LossError("ids and predictions differ in length")
    r_data = ad.square(pred - y_true)
    r_pi = ad.square(pred - y_pi)
    return ad.mean(r_data * wd + r_pi * wp)


@dataclass
class LossState:
    """Mutable per-run loss state: uncertainty scales and RBA EMAs."""

    config: LossConfig
    uncertainty: UncertaintyParams = field(default_factory=UncertaintyParams)
    rba: RbaState | None = None
