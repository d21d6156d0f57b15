"""Series ingestion, synthesis, chronological splitting, scaling and noise.

Random draws use ``numpy.random.Generator`` over PCG64 (64-bit state);
Gaussian samples come from its ziggurat ``standard_normal``.  Streams are
bit-reproducible on one platform/build and statistically equivalent across
platforms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .prior import Recipe, prior_values

CSV_HEADER = ("time_s", "temperature_c")
STEP_RTOL = 1e-9
TRAIN_FRACTION = 0.6
VAL_FRACTION = 0.2

NoiseMode = Literal["input_only", "system_wide"]
Split = Literal["train", "val", "test"]


class DataError(ValueError):
    pass


class MalformedRowError(DataError):
    pass


class NonMonotoneTimeError(DataError):
    pass


class NonUniformStepError(DataError):
    pass


class ConfigError(DataError):
    pass


class SeriesTooShortError(DataError):
    pass


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``seed`` and an optional stream path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream])))


def _check_times(times: np.ndarray) -> None:
    d = np.diff(times)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise NonMonotoneTimeError(f"time not strictly increasing at sample {i} (t={times[i]})")
    step = d[0]
    dev = np.abs(d - step) > STEP_RTOL * abs(step)
    if np.any(dev):
        i = int(np.flatnonzero(dev)[0]) + 1
        raise NonUniformStepError(f"non-uniform step at sample {i}: {d[i - 1]} vs {step}")


@dataclass(frozen=True)
class RawSeries:
    times: np.ndarray
    temps: np.ndarray
    source: str = "csv"

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        y = np.asarray(self.temps, dtype=np.float64)
        if t.ndim != 1 or t.shape != y.shape:
            raise DataError("times and temps must be 1-D with equal length")
        if t.size < 2:
            raise DataError("series needs at least 2 samples")
        if self.source not in ("csv", "synthetic"):
            raise DataError(f"unknown source {self.source!r}")
        _check_times(t)
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "temps", y)

    def __len__(self) -> int:
        return self.times.size

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])


def load_csv(path: str | Path) -> RawSeries:
    times, temps = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRowError(f"line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRowError(f"line {lineno}: expected 2 fields, got {len(row)}")
            try:
                t, y = float(row[0]), float(row[1])
            except ValueError:
                raise MalformedRowError(f"line {lineno}: non-numeric value in {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(y)):
                raise MalformedRowError(f"line {lineno}: non-finite value")
            times.append(t)
            temps.append(y)
    if len(times) < 2:
        raise DataError(f"{path}: need at least 2 data rows")
    return RawSeries(np.array(times), np.array(temps), "csv")


def save_csv(raw: RawSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t, y in zip(raw.times, raw.temps):
            w.writerow([repr(float(t)), repr(float(y))])


@dataclass(frozen=True)
class SyntheticConfig:
    recipe: Recipe
    step: float = 60.0
    lag_tau: float = 600.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ConfigError("step_s must be > 0")
        if self.lag_tau < 0:
            raise ConfigError("lag_tau_s must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.step >= self.recipe.duration:
            raise ConfigError(f"step_s={self.step} must be shorter than the recipe duration {self.recipe.duration}")


def synthesize_clean(config: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free lagged response ``(times, temps)``."""
    r = config.recipe
    n = int(math.floor(r.duration / config.step + 1e-9)) + 1
    times = r.start + config.step * np.arange(n)
    prior = prior_values(r, times)
    if config.lag_tau == 0:
        return times, prior
    gain = config.step / config.lag_tau
    temps = np.empty(n)
    temps[0] = prior[0]
    for k in range(n - 1):
        temps[k + 1] = temps[k] + gain * (prior[k] - temps[k])
    return times, temps


def synthesize(config: SyntheticConfig) -> RawSeries:
    """First-order thermal lag of the recipe prior plus seeded Gaussian noise."""
    times, temps = synthesize_clean(config)
    if config.noise_sigma > 0:
        temps = temps + config.noise_sigma * rng_for(config.seed).standard_normal(times.size)
    return RawSeries(times, temps, "synthetic")


@dataclass(frozen=True)
class Normalizer:
    """Affine map onto [-1, 1]: ``z = (x - shift) / scale``."""

    shift: float
    scale: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi == lo:
            return cls(float(np.mean(values)), 1.0)
        return cls((hi + lo) / 2.0, (hi - lo) / 2.0)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.shift


@dataclass(frozen=True)
class SeriesDataset:
    """Windowed, normalized, chronologically split view of one series.

    Window ``k`` uses series samples ``k .. k+lookback-1`` as input and
    sample ``k+lookback`` as target.  ``prior`` holds the normalized recipe
    prior at each target time when a recipe was supplied.
    """

    raw: RawSeries
    lookback: int
    train_end: int
    val_end: int
    norm: Normalizer
    inputs: np.ndarray
    targets: np.ndarray
    target_times: np.ndarray
    prior: np.ndarray | None = None
    recipe: Recipe | None = None
    noise: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for a in (self.inputs, self.targets, self.target_times) + ((self.prior,) if self.prior is not None else ()):
            a.flags.writeable = False

    @property
    def split_indices(self) -> tuple[int, int]:
        return self.train_end, self.val_end

    @property
    def n_windows(self) -> int:
        return self.targets.size

    def split_slice(self, split: Split) -> slice:
        return {
            "train": slice(0, self.train_end),
            "val": slice(self.train_end, self.val_end),
            "test": slice(self.val_end, self.n_windows),
        }[split]

    def X(self, split: Split) -> np.ndarray:
        return self.inputs[self.split_slice(split)]

    def y(self, split: Split) -> np.ndarray:
        return self.targets[self.split_slice(split)]

    def y_prior(self, split: Split) -> np.ndarray:
        if self.prior is None:
            raise DataError("dataset has no recipe prior attached")
        return self.prior[self.split_slice(split)]

    def times(self, split: Split) -> np.ndarray:
        return self.target_times[self.split_slice(split)]

    def series_index(self, split: Split) -> np.ndarray:
        """Raw-series sample index of each target in ``split``."""
        s = self.split_slice(split)
        return np.arange(s.start, s.stop) + self.lookback

    @property
    def train_series(self) -> np.ndarray:
        """Normalized raw samples covered by the training windows."""
        return self.norm.normalize(self.raw.temps[: self.train_end + self.lookback])

    def windows(self, split: Split = "train") -> list[tuple[np.ndarray, float, float]]:
        s = self.split_slice(split)
        return [(self.inputs[k], float(self.targets[k]), float(self.target_times[k]))
                for k in range(s.start, s.stop)]


def prepare(raw: RawSeries, lookback: int, recipe: Recipe | None = None) -> SeriesDataset:
    """Window the series (stride 1), split 60/20/20 by window count, scale to [-1, 1].

    Scaling parameters come from the raw samples touched by training windows
    only.
    """
    if lookback < 1:
        raise DataError("lookback must be a positive integer")
    n = len(raw)
    if n <= lookback + 5:
        raise SeriesTooShortError(f"series of length {n} too short for lookback {lookback} (need > {lookback + 5})")
    n_win = n - lookback
    train_end = int(math.floor(TRAIN_FRACTION * n_win))
    val_end = train_end + int(math.floor(VAL_FRACTION * n_win))
    norm = Normalizer.fit(raw.temps[: train_end + lookback])
    z = norm.normalize(raw.temps)
    inputs = sliding_window_view(z, lookback)[:n_win].copy()
    targets = z[lookback:].copy()
    target_times = raw.times[lookback:].copy()
    prior = None
    if recipe is not None:
        tt = np.clip(target_times, recipe.start, recipe.end)
        prior = norm.normalize(prior_values(recipe, tt))
    return SeriesDataset(raw, lookback, train_end, val_end, norm, inputs, targets, target_times, prior, recipe)


def _series_noise(ds: SeriesDataset, sigma: float, seed: int, stream: int) -> np.ndarray:
    return sigma * rng_for(seed, stream).standard_normal(len(ds.raw))


def inject_noise(ds: SeriesDataset, sigma: float, mode: NoiseMode, seed: int) -> SeriesDataset:
    """Gaussian sensor noise (normalized units) on the test split only.

    Noise is drawn once per raw sample, so a corrupted reading looks the same
    in every window that contains it.  ``input_only`` corrupts window inputs;
    ``system_wide`` corrupts inputs and targets alike.
    """
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise DataError(f"sigma must be a finite value >= 0, got {sigma}")
    if mode not in ("input_only", "system_wide"):
        raise DataError(f"unknown noise mode {mode!r}")
    if sigma == 0:
        return ds
    e = _series_noise(ds, sigma, seed, 1)
    s = ds.split_slice("test")
    inputs = ds.inputs.copy()
    inputs[s] += sliding_window_view(e, ds.lookback)[s]
    targets = ds.targets
    if mode == "system_wide":
        targets = targets.copy()
        targets[s] += e[ds.lookback:][s]
    noise = dict(ds.noise, test={"sigma": sigma, "mode": mode, "seed": seed})
    return replace(ds, inputs=inputs, targets=targets, noise=noise)


def inject_training_noise(ds: SeriesDataset, sigma: float, seed: int) -> SeriesDataset:
    """Noisy-sensor variant used to study the prior as a regularizer.

    Every window input is corrupted, as are train and validation targets;
    test targets stay clean so test error is measured against the true
    signal.  Distinct from the evaluation-time protocols of ``inject_noise``.
    """
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise DataError(f"sigma must be a finite value >= 0, got {sigma}")
    if sigma == 0:
        return ds
    e = _series_noise(ds, sigma, seed, 2)
    fit = slice(0, ds.val_end)
    inputs = ds.inputs + sliding_window_view(e, ds.lookback)[: ds.n_windows]
    targets = ds.targets.copy()
    targets[fit] += e[ds.lookback:][fit]
    noise = dict(ds.noise, training={"sigma": sigma, "seed": seed})
    return replace(ds, inputs=inputs, targets=targets, noise=noise)
