"""Classical baselines and the post-hoc prior blend.

Every model is fitted on the normalized training portion of a series and
then forecasts purely from its fitted state: the prediction for series
index ``i`` depends on ``i`` and the training data only, never on test-time
sensor readings.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

RIDGE = 1e-8
COND_LIMIT = 1e12
ETS_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
KALMAN_Q_LEVEL = (1e-8, 1e-6, 1e-4, 1e-2)
KALMAN_Q_SLOPE = (1e-10, 1e-8, 1e-6)
KALMAN_R = (1e-8, 1e-6, 1e-4, 1e-2)
KALMAN_P0 = 1.0


class ClassicalError(ValueError):
    pass


def _as_series(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ClassicalError("series contains non-finite values")
    return y


@dataclass
class ClassicalModel:
    """Base class: fitted state plus a forecast from the end of training."""

    n_train: int
    fit_seconds: float = 0.0
    kind: str = field(init=False, default="")

    def forecast(self, steps: int) -> np.ndarray:
        """Forecasts for series indices ``n_train .. n_train + steps - 1``."""
        raise NotImplementedError

    def predict(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        if idx.size == 0:
            return np.zeros(0)
        if idx.min() < self.n_train:
            raise ClassicalError(f"index {int(idx.min())} precedes the end of training ({self.n_train})")
        path = self.forecast(int(idx.max()) - self.n_train + 1)
        return path[idx - self.n_train]

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_train": self.n_train, "fit_seconds": self.fit_seconds, "params": self.params()}


@dataclass
class ARModel(ClassicalModel):
    """AR(p) on the d-times differenced series, with intercept."""

    p: int = 5
    d: int = 1
    intercept: float = 0.0
    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail: np.ndarray = field(default_factory=lambda: np.zeros(0))  # last p differenced values, oldest first
    last_levels: np.ndarray = field(default_factory=lambda: np.zeros(0))  # last value of each difference order < d
    regularized: bool = False

    def __post_init__(self) -> None:
        self.kind = "AR"

    def forecast(self, steps: int) -> np.ndarray:
        hist = list(self.tail)
        levels = list(self.last_levels)
        out = np.empty(steps)
        for h in range(steps):
            x = self.intercept + sum(self.coef[j] * hist[-1 - j] for j in range(self.p))
            hist.append(x)
            for j in range(self.d - 1, -1, -1):
                levels[j] = levels[j] + x
                x = levels[j]
            out[h] = x
        return out

    def params(self) -> dict:
        return {"p": self.p, "d": self.d, "intercept": self.intercept, "coef": self.coef.tolist(),
                "tail": self.tail.tolist(), "last_levels": self.last_levels.tolist(),
                "regularized": self.regularized}


def solve_least_squares(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normal-equation solve; falls back to a 1e-8 ridge when singular."""
    A = X.T @ X
    b = X.T @ y
    if np.linalg.matrix_rank(X) < X.shape[1] or np.linalg.cond(A) > COND_LIMIT:
        return np.linalg.solve(A + RIDGE * np.eye(A.shape[0]), b), True
    return np.linalg.solve(A, b), False


def fit_ar(series, p: int = 5, d: int = 1) -> ARModel:
    t0 = time.perf_counter()
    y = _as_series(series)
    if p < 1 or d < 0:
        raise ClassicalError("need p >= 1 and d >= 0")
    if y.size <= p + d + 2:
        raise ClassicalError(f"series of length {y.size} too short for AR({p}) with d={d}")
    levels = []
    w = y
    for _ in range(d):
        levels.append(w[-1])
        w = np.diff(w)
    rows = [np.concatenate(([1.0], w[k - p:k][::-1])) for k in range(p, w.size)]
    X = np.array(rows)
    beta, reg = solve_least_squares(X, w[p:])
    return ARModel(y.size, time.perf_counter() - t0, p=p, d=d, intercept=float(beta[0]), coef=beta[1:].copy(),
                   tail=w[-p:].copy(), last_levels=np.array(levels), regularized=reg)


@dataclass
class HoltModel(ClassicalModel):
    variant: str = "holt"
    alpha: float = 0.5
    beta: float = 0.1
    level: float = 0.0
    trend: float = 0.0

    def __post_init__(self) -> None:
        self.kind = "ETS"

    def forecast(self, steps: int) -> np.ndarray:
        return self.level + self.trend * np.arange(1, steps + 1)

    def params(self) -> dict:
        return {"variant": self.variant, "alpha": self.alpha, "beta": self.beta,
                "level": self.level, "trend": self.trend}


def holt_filter(y: np.ndarray, alpha: float, beta: float, trend: bool = True) -> tuple[float, float, float]:
    """Run Holt recursions; returns (level, trend, one-step SSE from t=2)."""
    level = y[0]
    b = (y[1] - y[0]) if trend else 0.0
    sse = 0.0
    for t in range(1, y.size):
        pred = level + b
        if t >= 2:
            sse += (y[t] - pred) ** 2
        new_level = alpha * y[t] + (1.0 - alpha) * pred
        if trend:
            b = beta * (new_level - level) + (1.0 - beta) * b
        level = new_level
    return level, b, sse


def fit_ets(series, variant: str = "holt", alpha: float | None = None, beta: float | None = None) -> HoltModel:
    """Holt linear trend (or simple smoothing); ``None`` parameters are grid-selected."""
    t0 = time.perf_counter()
    y = _as_series(series)
    if y.size < 10:
        raise ClassicalError("ETS needs at least 10 observations")
    if variant not in ("simple", "holt"):
        raise ClassicalError(f"unknown ETS variant {variant!r}")
    use_trend = variant == "holt"
    alphas = ETS_GRID if alpha is None else (alpha,)
    betas = ((0.0,) if not use_trend else ETS_GRID) if beta is None else (beta,)
    best = None
    for a, b in itertools.product(alphas, betas):
        lv, tr, sse = holt_filter(y, a, b, use_trend)
        if best is None or sse < best[0]:
            best = (sse, a, b, lv, tr)
    _, a, b, lv, tr = best
    return HoltModel(y.size, time.perf_counter() - t0, variant=variant, alpha=a, beta=b, level=float(lv), trend=float(tr))


@dataclass
class KalmanModel(ClassicalModel):
    """Local linear trend: level/slope state, scalar observation."""

    q_level: float = 1e-6
    q_slope: float = 1e-8
    r: float = 1e-4
    state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cov: np.ndarray = field(default_factory=lambda: np.eye(2))
    nll: float = 0.0

    def __post_init__(self) -> None:
        self.kind = "Kalman"

    def forecast(self, steps: int) -> np.ndarray:
        level, slope = self.state
        return level + slope * np.arange(1, steps + 1)

    def params(self) -> dict:
        return {"q_level": self.q_level, "q_slope": self.q_slope, "r": self.r, "state": self.state.tolist(),
                "cov": self.cov.tolist(), "nll": self.nll}


def kalman_filter(y: np.ndarray, q_level: float, q_slope: float, r: float, p0: float = KALMAN_P0):
    """Filter the series; returns (filtered states (n, 2), final covariance, negative log-likelihood).

    The initial state is ``[y[0], 0]`` with covariance ``p0 * I``; the first
    observation is assimilated without a prediction step.
    """
    n = y.size
    lv, sl = float(y[0]), 0.0
    p11, p12, p22 = p0, 0.0, p0
    states = np.empty((n, 2))
    nll = 0.0
    for t in range(n):
        if t > 0:
            lv = lv + sl
            p11 = p11 + 2.0 * p12 + p22 + q_level
            p12 = p12 + p22
            p22 = p22 + q_slope
        v = y[t] - lv
        s = p11 + r
        k1 = p11 / s
        k2 = p12 / s
        lv += k1 * v
        sl += k2 * v
        p22 = p22 - k2 * p12
        p11 = p11 * (1.0 - k1)
        p12 = p12 * (1.0 - k1)
        nll += 0.5 * (math.log(2.0 * math.pi * s) + v * v / s)
        states[t] = lv, sl
    return states, np.array([[p11, p12], [p12, p22]]), nll


def fit_kalman(series, q_level: float | None = None, q_slope: float | None = None, r: float | None = None) -> KalmanModel:
    """Fit variances on a log-grid by one-step likelihood; explicit values bypass the grid."""
    t0 = time.perf_counter()
    y = _as_series(series)
    if y.size < 10:
        raise ClassicalError("Kalman filter needs at least 10 observations")
    grid = itertools.product(
        KALMAN_Q_LEVEL if q_level is None else (q_level,),
        KALMAN_Q_SLOPE if q_slope is None else (q_slope,),
        KALMAN_R if r is None else (r,),
    )
    best = None
    for ql, qs, rr in grid:
        states, cov, nll = kalman_filter(y, ql, qs, rr)
        if best is None or nll < best[0]:
            best = (nll, ql, qs, rr, states[-1].copy(), cov)
    nll, ql, qs, rr, state, cov = best
    return KalmanModel(y.size, time.perf_counter() - t0, q_level=ql, q_slope=qs, r=rr, state=state, cov=cov, nll=nll)


@dataclass
class LinRegModel(ClassicalModel):
    slope: float = 0.0
    intercept: float = 0.0

    def __post_init__(self) -> None:
        self.kind = "LinReg"

    def forecast(self, steps: int) -> np.ndarray:
        return self.intercept + self.slope * (self.n_train + np.arange(steps))

    def predict(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.float64).reshape(-1)
        return self.intercept + self.slope * idx

    def params(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept}


def fit_linreg(series) -> LinRegModel:
    """OLS of the series on its sample index."""
    t0 = time.perf_counter()
    y = _as_series(series)
    if y.size < 2:
        raise ClassicalError("linear regression needs at least 2 observations")
    X = np.column_stack([np.arange(y.size, dtype=np.float64), np.ones(y.size)])
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    return LinRegModel(y.size, time.perf_counter() - t0, slope=float(slope), intercept=float(intercept))


FITTERS = {"AR": fit_ar, "ETS": fit_ets, "Kalman": fit_kalman, "LinReg": fit_linreg}
TABLE_NAMES = {"AR": "ARIMA", "ETS": "ETS", "Kalman": "KalmanFilter", "LinReg": "LinearRegression"}


def fit_classical(kind: str, series, **kwargs) -> ClassicalModel:
    if kind not in FITTERS:
        raise ClassicalError(f"unknown classical model {kind!r}; expected one of {sorted(FITTERS)}")
    return FITTERS[kind](series, **kwargs)


_CLASSES = {"AR": ARModel, "ETS": HoltModel, "Kalman": KalmanModel, "LinReg": LinRegModel}
_ARRAY_FIELDS = {"coef", "tail", "last_levels", "state", "cov"}


def model_from_dict(data: dict) -> ClassicalModel:
    kind = data["kind"]
    if kind not in _CLASSES:
        raise ClassicalError(f"unknown classical model kind {kind!r}")
    params = {k: (np.array(v, dtype=np.float64) if k in _ARRAY_FIELDS else v) for k, v in data["params"].items()}
    return _CLASSES[kind](data["n_train"], data.get("fit_seconds", 0.0), **params)


def dumps_model(model: ClassicalModel) -> str:
    return json.dumps(model.to_dict())


def loads_model(text: str) -> ClassicalModel:
    return model_from_dict(json.loads(text))


@dataclass(frozen=True)
class BlendWeights:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ClassicalError("blend weights must be nonnegative")
        if not self.alpha + self.beta > 0:
            raise ClassicalError("alpha + beta must be positive")


def blend(pred, prior, w: BlendWeights) -> np.ndarray:
    """Convex combination (alpha * pred + beta * prior) / (alpha + beta)."""
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(prior, dtype=np.float64)
    if p.shape != q.shape:
        raise ClassicalError(f"length mismatch: {p.shape} vs {q.shape}")
    return (w.alpha * p + w.beta * q) / (w.alpha + w.beta)


def default_blend_grid() -> list[BlendWeights]:
    return [BlendWeights(k / 10, (10 - k) / 10) for k in range(11)]


def search_blend_weights(pred_val, prior_val, y_val, grid: Sequence[BlendWeights] | None = None) -> BlendWeights:
    """Grid pair with the lowest validation RMSE; ties go to the larger alpha."""
    y = np.asarray(y_val, dtype=np.float64)
    if y.size == 0:
        raise ClassicalError("empty validation split")
    grid = list(default_blend_grid() if grid is None else grid)
    best_w, best_err = None, math.inf
    for w in sorted(grid, key=lambda w: -w.alpha / (w.alpha + w.beta)):
        err = float(np.sqrt(np.mean((blend(pred_val, prior_val, w) - y) ** 2)))
        if err < best_err:
            best_w, best_err = w, err
    return best_w


def blend_table(pred_val, prior_val, y_val, grid: Iterable[BlendWeights] | None = None) -> list[tuple[BlendWeights, float]]:
    y = np.asarray(y_val, dtype=np.float64)
    return [(w, float(np.sqrt(np.mean((blend(pred_val, prior_val, w) - y) ** 2))))
            for w in (default_blend_grid() if grid is None else grid)]
