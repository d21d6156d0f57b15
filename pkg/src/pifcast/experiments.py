"""Benchmark matrix, evaluation-time noise sweeps and the transfer protocol.

Each benchmark cell (one classical family, or one neural family x strategy x
tier x seed) is an independent job.  Jobs may run in a process pool; results
are always gathered in plan order, so outputs do not depend on ``jobs``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import classical as C
from .config import BenchmarkCommand, TransferCommand
from .data import SeriesDataset, inject_noise, inject_training_noise, rng_for
from .losses import LossConfig
from .metrics import EvalReport, evaluate
from .neural import build, family_class, load_checkpoint
from .neural.base import NeuralModel, uniform_init
from .training import TrainConfig, TrainReport, default_lr, search_lambda, train

METRICS = ("RMSE", "Linf_RMSE", "GradientError", "Linf_GradError")
UNITS = ("normalized", "celsius")
SUFFIX = {"data_only": "", "fixed": "_fixed", "uncertainty": "_uncertainty", "rba": "_RBA"}


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cell:
    family: str
    strategy: str = "none"
    tier: int | None = None
    seed: int | None = None

    @property
    def classical(self) -> bool:
        return self.family in C.TABLE_NAMES

    @property
    def label(self) -> str:
        if self.classical:
            return C.TABLE_NAMES[self.family]
        return self.family + SUFFIX[self.strategy]


@dataclass
class Trained:
    """A fitted forecaster plus what is needed to re-evaluate it under noise."""

    label: str
    family: str
    strategy: str
    tier: int | None
    seed: int | None
    seconds: float
    model: NeuralModel | C.ClassicalModel
    weights: C.BlendWeights | None = None
    lam: float | None = None
    report: TrainReport | None = None

    def predict(self, ds: SeriesDataset) -> np.ndarray:
        """Normalized test-split forecasts."""
        if isinstance(self.model, NeuralModel):
            return self.model.predict(ds.X("test"))
        pred = self.model.predict(ds.series_index("test"))
        if self.weights is not None:
            pred = C.blend(pred, ds.y_prior("test"), self.weights)
        return pred


@dataclass
class Row:
    label: str
    family: str
    strategy: str
    tier: int | None
    seed: int | None
    protocol: str
    status: str = "ok"
    reports: dict[str, EvalReport] = field(default_factory=dict)
    lam: float | None = None
    seconds: float = 0.0
    error: str = ""


@dataclass
class CellOutcome:
    cell: Cell
    rows: list[Row]
    trained: list[Trained]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def eval_both(label: str, pred: np.ndarray, ds: SeriesDataset, seconds: float) -> dict[str, EvalReport]:
    y = ds.y("test")
    return {
        "normalized": evaluate(label, pred, y, seconds, "normalized"),
        "celsius": evaluate(label, ds.norm.invert(pred), ds.norm.invert(y), seconds, "celsius"),
    }


# -- cells --------------------------------------------------------------------

def fit_classical_cell(family: str, ds: SeriesDataset, blend: bool) -> list[Trained]:
    model = C.fit_classical(family, ds.train_series)
    name = C.TABLE_NAMES[family]
    out = [Trained(name, family, "none", None, None, model.fit_seconds, model)]
    if blend:
        t0 = time.perf_counter()
        w = C.search_blend_weights(model.predict(ds.series_index("val")), ds.y_prior("val"), ds.y("val"))
        secs = model.fit_seconds + time.perf_counter() - t0
        out.append(Trained(name + "_fixed", family, "blend", None, None, secs, model, w))
    return out


def train_neural_cell(cell: Cell, ds: SeriesDataset, base: TrainConfig, grid: Sequence[float], eta: float) -> Trained:
    lookback = ds.lookback
    if cell.strategy == "fixed":
        cfg = TrainConfig(base.max_epochs, base.batch_size, base.lr, base.patience, cell.seed, LossConfig("fixed", 0.0, eta))
        search = search_lambda(lambda: build(cell.family, cell.tier, lookback, cell.seed), ds, grid, cfg, keep_models=True)
        model, report = search.runs[search.best]
        lam = search.best
    else:
        cfg = TrainConfig(base.max_epochs, base.batch_size, base.lr, base.patience, cell.seed,
                          LossConfig(cell.strategy, None, eta))
        model, report = train(build(cell.family, cell.tier, lookback, cell.seed), ds, cfg)
        lam = None
    return Trained(cell.label, cell.family, cell.strategy, cell.tier, cell.seed, report.seconds, model, None, lam, report)


def plan_cells(plan: BenchmarkCommand) -> list[Cell]:
    cells = [Cell(f) for f in plan.families if f in C.TABLE_NAMES]
    for f in plan.families:
        if f in C.TABLE_NAMES:
            continue
        for tier in plan.tiers:
            for strategy in plan.strategies:
                for seed in plan.seeds:
                    cells.append(Cell(f, strategy, tier, seed))
    return cells


_DATASETS: dict[str, tuple[SeriesDataset, str]] = {}


def plan_dataset(plan: BenchmarkCommand, base: Path | None = None) -> tuple[SeriesDataset, str]:
    """Dataset the plan trains on and its protocol label (cached per process)."""
    key = plan.model_dump_json() + str(base)
    if key not in _DATASETS:
        ds = plan.dataset.build(base)
        protocol = "clean"
        if plan.training_noise is not None and plan.training_noise.sigma > 0:
            ds = inject_training_noise(ds, plan.training_noise.sigma, plan.training_noise.seed)
            protocol = "noisy_train"
        _DATASETS.clear()
        _DATASETS[key] = (ds, protocol)
    return _DATASETS[key]


def run_cell(plan: BenchmarkCommand, cell: Cell, base: Path | None = None) -> CellOutcome:
    """Train or fit one cell; a failure becomes a ``failed`` row instead of an exception."""
    ds, protocol = plan_dataset(plan, base)
    try:
        if cell.classical:
            trained = fit_classical_cell(cell.family, ds, plan.blend)
        else:
            cfg = plan.train.config(0)
            trained = [train_neural_cell(cell, ds, cfg, plan.lambda_grid, plan.eta)]
    except Exception as exc:  # partial-results contract: record and move on
        row = Row(cell.label, cell.family, cell.strategy, cell.tier, cell.seed, protocol, "failed",
                  error=f"{type(exc).__name__}: {exc}")
        return CellOutcome(cell, [row], [])
    rows = []
    for t in trained:
        rows.append(Row(t.label, t.family, t.strategy, t.tier, t.seed, protocol, "ok",
                        eval_both(t.label, t.predict(ds), ds, t.seconds), t.lam, t.seconds))
    return CellOutcome(cell, rows, trained)


def _run_cell_job(args) -> CellOutcome:
    return run_cell(*args)


def run_cells(plan: BenchmarkCommand, base: Path | None = None, jobs: int = 1,
              on_result: Callable[[CellOutcome], None] | None = None) -> list[CellOutcome]:
    """All plan cells in plan order, optionally in a bounded process pool."""
    cells = plan_cells(plan)
    out: list[CellOutcome] = []

    def collect(res: CellOutcome) -> None:
        out.append(res)
        if on_result is not None:
            on_result(res)

    if jobs <= 1 or len(cells) <= 1:
        for c in cells:
            collect(run_cell(plan, c, base))
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_cell_job, (plan, c, base)) for c in cells]
        try:
            for f in futures:
                collect(f.result())
        except BaseException:
            for f in futures:
                f.cancel()
            raise
    return out


@dataclass
class BenchmarkResult:
    rows: list[Row]
    trained: list[Trained]
    dataset: SeriesDataset
    protocol: str

    @property
    def failures(self) -> list[Row]:
        return [r for r in self.rows if r.status != "ok"]


def run_benchmark(plan: BenchmarkCommand, base: Path | None = None, jobs: int = 1,
                  on_result: Callable[[CellOutcome], None] | None = None) -> BenchmarkResult:
    outcomes = run_cells(plan, base, jobs, on_result)
    ds, protocol = plan_dataset(plan, base)
    return collect_outcomes(outcomes, ds, protocol)


def collect_outcomes(outcomes: Iterable[CellOutcome], ds: SeriesDataset, protocol: str) -> BenchmarkResult:
    rows, trained = [], []
    for o in outcomes:
        rows.extend(o.rows)
        trained.extend(o.trained)
    return BenchmarkResult(rows, trained, ds, protocol)


# -- aggregation and tables ---------------------------------------------------

PER_SEED_COLUMNS = ("protocol", "units", "tier", "seed", "Model", *METRICS, "lambda", "status")
SUMMARY_COLUMNS = ("protocol", "units", "tier", "Model", "n_seeds",
                   *(f"{m}_{s}" for m in METRICS for s in ("mean", "std")))


def _metric_values(rep: EvalReport) -> tuple[float, ...]:
    return rep.rmse, rep.linf_rmse, rep.gradient_error, rep.linf_grad_error


def per_seed_records(rows: Sequence[Row]) -> list[dict]:
    recs = []
    for units in UNITS:
        for r in rows:
            rec = {"protocol": r.protocol, "units": units, "tier": r.tier, "seed": r.seed, "Model": r.label}
            vals = _metric_values(r.reports[units]) if r.status == "ok" else (None,) * 4
            rec.update(zip(METRICS, vals))
            rec.update({"lambda": r.lam, "status": r.status})
            recs.append(rec)
    return recs


def aggregate(rows: Sequence[Row]) -> list[dict]:
    """Mean and sample std over seeds for each (units, tier, model)."""
    groups: dict[tuple, list[Row]] = {}
    for r in rows:
        if r.status == "ok":
            groups.setdefault((r.protocol, r.tier, r.label), []).append(r)
    recs = []
    for units in UNITS:
        for (protocol, tier, label), members in groups.items():
            vals = np.array([_metric_values(m.reports[units]) for m in members])
            mean = vals.mean(axis=0)
            std = vals.std(axis=0, ddof=1) if len(members) > 1 else np.zeros(len(METRICS))
            rec = {"protocol": protocol, "units": units, "tier": tier, "Model": label, "n_seeds": len(members)}
            for i, m in enumerate(METRICS):
                rec[f"{m}_mean"] = float(mean[i])
                rec[f"{m}_std"] = float(std[i])
            recs.append(rec)
    return recs


def to_csv(records: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(rec.get(c)) for c in columns])
    return buf.getvalue()


def timings(rows: Sequence[Row]) -> list[dict]:
    return [{"Model": r.label, "tier": r.tier, "seed": r.seed, "protocol": r.protocol,
             "TrainingTime_s": round(r.seconds, 2)} for r in rows if r.status == "ok"]


# -- robustness sweep ---------------------------------------------------------

LONG_COLUMNS = ("model", "tier", "seed", "sigma", "mode", "units", "metric", "value")


def run_noise_sweep(plan: BenchmarkCommand, trained: Sequence[Trained], ds: SeriesDataset) -> list[dict]:
    """Evaluate already-trained models on noise-corrupted copies of the test split.

    Every model sees the same noise draw at a given sigma (common random
    numbers), so curves are comparable across models.
    """
    if not trained:
        raise ExperimentError("noise sweep needs at least one trained model")
    out = []
    for mode in plan.modes:
        for sigma in plan.sigmas:
            nds = inject_noise(ds, sigma, mode, plan.noise_seed)
            for t in trained:
                reports = eval_both(t.label, t.predict(nds), nds, t.seconds)
                for units in UNITS:
                    for metric, v in zip(METRICS, _metric_values(reports[units])):
                        out.append({"model": t.label, "tier": t.tier, "seed": t.seed, "sigma": float(sigma),
                                    "mode": mode, "units": units, "metric": metric, "value": v})
    return out


# -- transfer -----------------------------------------------------------------

TRANSFER_COLUMNS = ("units", "seed", "family", "strategy", "Model", *METRICS, "body_unchanged")


@dataclass
class TransferRow:
    family: str
    strategy: str
    seed: int
    reports: dict[str, EvalReport]
    seconds: float
    body_unchanged: bool | None = None
    train_report: TrainReport | None = None


@dataclass
class TransferResult:
    rows: list[TransferRow]
    pretrain: dict[int, TrainReport] = field(default_factory=dict)

    def records(self) -> list[dict]:
        recs = []
        for units in UNITS:
            for r in self.rows:
                rec = {"units": units, "seed": r.seed, "family": r.family, "strategy": r.strategy,
                       "Model": f"{r.family}_{r.strategy}", "body_unchanged": r.body_unchanged}
                rec.update(zip(METRICS, _metric_values(r.reports[units])))
                recs.append(rec)
        return recs


def _source_model(plan: TransferCommand, seed: int, base: Path | None) -> tuple[NeuralModel, TrainReport | None]:
    src = plan.source
    if src.checkpoint is not None:
        path = Path(src.checkpoint)
        if base is not None and not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ExperimentError(f"source checkpoint not found: {path}")
        model = load_checkpoint(path)
        model.unfreeze()
        return model, None
    ds = src.dataset.build(base)
    model = build(src.family, src.tier, ds.lookback, seed)
    return train(model, ds, plan.train.config(seed))


def _copy(model: NeuralModel) -> NeuralModel:
    clone = family_class(model.family)(model.lookback, seed=model.seed, tier=model.tier, **model.hparams)
    clone.restore(model.params)
    return clone


def transfer_one(plan: TransferCommand, seed: int, source: NeuralModel, target: SeriesDataset,
                 clock: Callable[[], float] = time.perf_counter) -> list[TransferRow]:
    if source.lookback != target.lookback:
        raise ExperimentError(f"source lookback {source.lookback} != target lookback {target.lookback}")
    rows = []
    base_cfg = plan.train.config(seed)
    for strategy in plan.strategies:
        model = _copy(source)
        report = None
        unchanged = None
        if strategy == "baseline_eval":
            t0 = clock()
            seconds = clock() - t0
        elif strategy == "linear_probe":
            body = model.body_checksum()
            h = model.hidden_width
            model.replace_head(uniform_init(rng_for(seed, 13), (h,), h), 0.0, freeze_body=True)
            cfg = TrainConfig(base_cfg.max_epochs, base_cfg.batch_size, plan.probe_lr, base_cfg.patience, seed)
            model, report = train(model, target, cfg)
            seconds = report.seconds
            unchanged = model.body_checksum() == body
        else:
            lr = (plan.train.lr or default_lr(model.family)) * plan.finetune_lr_factor
            cfg = TrainConfig(base_cfg.max_epochs, base_cfg.batch_size, lr, base_cfg.patience, seed)
            model, report = train(model, target, cfg)
            seconds = report.seconds
        label = f"{model.family}_{strategy}"
        rows.append(TransferRow(model.family, strategy, seed,
                                eval_both(label, model.predict(target.X("test")), target, seconds),
                                seconds, unchanged, report))
    return rows


def _transfer_job(args) -> tuple[list[TransferRow], TrainReport | None]:
    plan, seed, base = args
    source, pre = _source_model(plan, seed, base)
    target = plan.target.build(base)
    return transfer_one(plan, seed, source, target), pre


def run_transfer(plan: TransferCommand, base: Path | None = None, jobs: int = 1,
                 on_result: Callable[[list[TransferRow]], None] | None = None) -> TransferResult:
    args = [(plan, s, base) for s in plan.seeds]
    result = TransferResult([])

    def collect(seed, res):
        rows, pre = res
        result.rows.extend(rows)
        if pre is not None:
            result.pretrain[seed] = pre
        if on_result is not None:
            on_result(rows)

    if jobs <= 1 or len(args) <= 1:
        for a in args:
            collect(a[1], _transfer_job(a))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_transfer_job, a) for a in args]
            for a, f in zip(args, futures):
                collect(a[1], f.result())
    return result


def json_dump(obj) -> str:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, float) and not math.isfinite(o):
            return None
        raise TypeError(f"cannot serialize {type(o).__name__}")
    return json.dumps(obj, indent=2, sort_keys=True, default=default)
