"""Mini-batch Adam training with validation early stopping, and lambda search.

Validation RMSE for early stopping is measured in normalized units.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import losses as L
from .autodiff import NonFiniteError, Tape
from .data import SeriesDataset, rng_for
from .metrics import rmse
from .neural.base import NeuralModel

DEFAULT_LR = 1e-3
TRANSFORMER_LR = 5e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CURVE_COLUMNS = ("epoch", "train_loss", "val_rmse")


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Raised when the loss or a gradient stops being finite."""

    def __init__(self, message: str, last_finite_epoch: int) -> None:
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


def default_lr(family: str) -> float:
    return TRANSFORMER_LR if family == "Transformer" else DEFAULT_LR


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 64
    lr: float | None = None
    patience: int = 10
    seed: int = 0
    loss: L.LossConfig = field(default_factory=L.LossConfig)

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise TrainingError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not 1 <= self.patience < self.max_epochs:
            raise TrainingError(f"patience must satisfy 1 <= patience < max_epochs, got {self.patience}")
        if self.lr is not None and not (self.lr > 0 and math.isfinite(self.lr)):
            raise TrainingError(f"learning rate must be > 0, got {self.lr}")

    def learning_rate(self, family: str) -> float:
        return self.lr if self.lr is not None else default_lr(family)


@dataclass
class TrainReport:
    family: str
    strategy: str
    lam: float | None
    epochs_run: int
    best_epoch: int
    train_loss: list[float]
    val_rmse: list[float]
    seconds: float
    checksum: str
    learning_rate: float
    sigmas: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.best_epoch <= self.epochs_run:
            raise TrainingError("best epoch must lie within the epochs run")

    @property
    def best_val_rmse(self) -> float:
        return self.val_rmse[self.best_epoch - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigmas"] = list(self.sigmas) if self.sigmas is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        d = json.loads(text)
        if d.get("sigmas") is not None:
            d["sigmas"] = tuple(d["sigmas"])
        return cls(**d)

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for i, (tl, vr) in enumerate(zip(self.train_loss, self.val_rmse), start=1):
            w.writerow([i, repr(tl), repr(vr)])
        return buf.getvalue()

    def save(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(self.to_json() + "\n", encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.curves_csv(), encoding="utf-8")


class Adam:
    """Adam over a dict of named arrays."""

    def __init__(self, lr: float, betas: tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS) -> None:
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_inputs(model: NeuralModel, dataset: SeriesDataset, config: TrainConfig) -> None:
    if model.lookback != dataset.lookback:
        raise TrainingError(f"model lookback {model.lookback} != dataset lookback {dataset.lookback}")
    if dataset.train_end < 1 or dataset.val_end <= dataset.train_end:
        raise TrainingError("dataset needs non-empty train and validation splits")
    cfg = config.loss
    if cfg.strategy != "data_only" and dataset.prior is None:
        raise TrainingError(f"strategy {cfg.strategy!r} needs a dataset with a recipe prior")
    if cfg.strategy == "fixed" and cfg.lam is None:
        raise TrainingError("fixed strategy needs a lambda value")
    if not model.trainable_names():
        raise TrainingError("model has no trainable parameters")


def _batch_loss(state: L.LossState, pred, y, p, ids, lsd, lsp):
    s = state.config.strategy
    if s == "data_only":
        return L.mse(pred, y)
    if s == "fixed":
        return L.fixed_loss(pred, y, p, state.config.lam)
    if s == "uncertainty":
        return L.uncertainty_loss(pred, y, p, lsd, lsp)
    # update-then-weigh: the EMA sees this batch's residuals first
    state.rba = L.rba_update(state.rba, ids, pred, y, p)
    return L.rba_loss(state.rba, ids, pred, y, p)


def train(model: NeuralModel, dataset: SeriesDataset, config: TrainConfig,
          clock: Callable[[], float] = time.perf_counter) -> tuple[NeuralModel, TrainReport]:
    """Train in place and return ``(model, report)`` with best-epoch weights restored."""
    _check_inputs(model, dataset, config)
    cfg = config.loss
    lr = config.learning_rate(model.family)
    X, y = dataset.X("train"), dataset.y("train")
    P_train = dataset.y_prior("train") if dataset.prior is not None else None
    Xv, yv = dataset.X("val"), dataset.y("val")
    n = y.size
    state = L.LossState(cfg, rba=L.RbaState.zeros(n, cfg.eta) if cfg.strategy == "rba" else None)
    names = model.trainable_names()
    opt = Adam(lr)
    rng = rng_for(config.seed, 11)
    uncertain = cfg.strategy == "uncertainty"
    extra = {"log_sigma": state.uncertainty.as_array()}

    best_val, best_epoch, best_snap, best_extra = math.inf, 0, None, extra["log_sigma"].copy()
    train_curve: list[float] = []
    val_curve: list[float] = []
    wait = 0
    start = clock()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            ids = order[lo:lo + config.batch_size]
            tape = Tape()
            P = model.leaves(tape)
            ls = tape.leaf(extra["log_sigma"]) if uncertain else None
            try:
                pred = model.forward(tape, X[ids], P)
                pb = P_train[ids] if P_train is not None else None
                loss = _batch_loss(state, pred, y[ids], pb, ids, ls[0] if uncertain else None,
                                   ls[1] if uncertain else None)
                wrt = [P[k] for k in names] + ([ls] if uncertain else [])
                grads = tape.grad(loss, wrt)
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite value in epoch {epoch}: {exc}", epoch - 1) from exc
            lval = loss.item()
            if not math.isfinite(lval):
                raise DivergenceError(f"loss became {lval} in epoch {epoch}", epoch - 1)
            total += lval * ids.size
            step = dict(zip(names, grads))
            if uncertain:
                step["log_sigma"] = grads[-1]
            params = dict(model.params, **extra)
            opt.step(params, step)
            for k in names:
                model.params[k] = params[k]
            extra["log_sigma"] = params["log_sigma"]
        val = rmse(model.predict(Xv), yv)
        if not math.isfinite(val):
            raise DivergenceError(f"validation RMSE became {val} in epoch {epoch}", epoch - 1)
        train_curve.append(total / n)
        val_curve.append(val)
        if val < best_val:
            best_val, best_epoch, wait = val, epoch, 0
            best_snap = model.snapshot()
            best_extra = extra["log_sigma"].copy()
        else:
            wait += 1
            if wait >= config.patience:
                break
    seconds = clock() - start
    model.restore(best_snap)
    state.uncertainty.set_array(best_extra)
    report = TrainReport(
        family=model.family, strategy=cfg.strategy, lam=cfg.lam, epochs_run=len(val_curve),
        best_epoch=best_epoch, train_loss=train_curve, val_rmse=val_curve, seconds=seconds,
        checksum=model.checksum(), learning_rate=lr,
        sigmas=state.uncertainty.sigmas if uncertain else None,
    )
    return model, report


@dataclass
class LambdaSearch:
    best: float
    table: list[tuple[float, float]]
    runs: dict[float, tuple[NeuralModel, TrainReport]] = field(default_factory=dict, repr=False)

    def __iter__(self) -> Iterator:
        yield self.best
        yield self.table


def pick_lambda(table: Sequence[tuple[float, float]]) -> float:
    """Argmin validation RMSE; ties go to the smaller lambda."""
    if not table:
        raise TrainingError("lambda grid is empty")
    return min(table, key=lambda row: (row[1], row[0]))[0]


def search_lambda(factory: Callable[[], NeuralModel], dataset: SeriesDataset,
                  grid: Sequence[float] = L.LAMBDA_GRID, config: TrainConfig | None = None,
                  keep_models: bool = False) -> LambdaSearch:
    """Train one fixed-weight model per lambda from the same seed; pick by validation RMSE."""
    if len(grid) == 0:
        raise TrainingError("lambda grid is empty")
    base = config or TrainConfig()
    table, runs = [], {}
    for lam in sorted(float(v) for v in grid):
        cfg = replace(base, loss=L.LossConfig("fixed", lam, base.loss.eta))
        model, report = train(factory(), dataset, cfg)
        table.append((lam, report.best_val_rmse))
        if keep_models:
            runs[lam] = (model, report)
    return LambdaSearch(pick_lambda(table), table, runs)
