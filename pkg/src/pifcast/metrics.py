"""Accuracy and physical-plausibility metrics over a test series."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

TABLE_COLUMNS = ("Model", "RMSE", "Linf_RMSE", "GradientError", "Linf_GradError", "TrainingTime_s")


class MetricError(ValueError):
    pass


def _pair(pred, truth, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_len:
        raise MetricError(f"need at least {min_len} points, got {p.size}")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def linf_rmse(pred, truth) -> float:
    """Largest absolute pointwise error."""
    p, t = _pair(pred, truth)
    return float(np.max(np.abs(p - t)))


def series_gradient(x: np.ndarray) -> np.ndarray:
    """Per-sample gradient: central differences inside, one-sided at both ends."""
    g = np.empty_like(x)
    g[1:-1] = (x[2:] - x[:-2]) / 2.0
    g[0] = x[1] - x[0]
    g[-1] = x[-1] - x[-2]
    return g


def _grad_gap(pred, truth) -> np.ndarray:
    p, t = _pair(pred, truth, min_len=3)
    return np.abs(series_gradient(p) - series_gradient(t))


def gradient_error(pred, truth) -> float:
    return float(np.mean(_grad_gap(pred, truth)))


def linf_grad_error(pred, truth) -> float:
    return float(np.max(_grad_gap(pred, truth)))


@dataclass(frozen=True)
class EvalReport:
    model: str
    rmse: float
    linf_rmse: float
    gradient_error: float
    linf_grad_error: float
    n_points: int
    training_seconds: float = 0.0
    units: str = "normalized"

    def __post_init__(self) -> None:
        for name in ("rmse", "linf_rmse", "gradient_error", "linf_grad_error", "training_seconds"):
            if not math.isfinite(getattr(self, name)):
                raise MetricError(f"{name} is not finite")

    def row(self) -> dict:
        return {
            "Model": self.model,
            "RMSE": self.rmse,
            "Linf_RMSE": self.linf_rmse,
            "GradientError": self.gradient_error,
            "Linf_GradError": self.linf_grad_error,
            "TrainingTime_s": round(self.training_seconds, 2),
        }

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: str, pred, truth, training_seconds: float = 0.0, units: str = "normalized") -> EvalReport:
    p, t = _pair(pred, truth, min_len=3)
    return EvalReport(model, rmse(p, t), linf_rmse(p, t), gradient_error(p, t), linf_grad_error(p, t),
                      p.size, training_seconds, units)
