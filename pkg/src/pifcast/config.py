"""Strict JSON configuration models for the command-line pipelines.

Unknown keys are rejected.  ``load_config`` turns any validation problem
into a ``ConfigKeyError`` whose ``key`` is the dotted path of the offending
field.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .classical import TABLE_NAMES
from .data import SyntheticConfig, load_csv, prepare, synthesize, SeriesDataset
from .losses import LAMBDA_GRID, STRATEGIES, DEFAULT_ETA
from .neural import DESK_TIERS, FAMILIES
from .prior import Recipe, default_recipe, load_recipe, recipe_from_dict, secondary_recipe
from .training import TrainConfig

CLASSICAL = tuple(TABLE_NAMES)
SIGMA_GRID = tuple(round(0.1 * k, 1) for k in range(11))
BUILTIN_RECIPES = {"primary": default_recipe, "secondary": secondary_recipe}


class ConfigKeyError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def resolve_recipe(ref: Union[str, dict], base: Path | None = None) -> Recipe:
    """Built-in name, path to a recipe JSON file, or an inline recipe object."""
    if isinstance(ref, dict):
        return recipe_from_dict(ref)
    if ref in BUILTIN_RECIPES:
        return BUILTIN_RECIPES[ref]()
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    return load_recipe(path)


class SynthSpec(Strict):
    """Synthetic series: recipe, sampling step, thermal lag, sensor noise, seed."""

    recipe: Union[str, dict] = "primary"
    step_s: float = Field(60.0, gt=0)
    lag_tau_s: float = Field(600.0, ge=0)
    noise_sigma: float = Field(0.0, ge=0)
    seed: int = 0

    def synthetic_config(self, base: Path | None = None) -> SyntheticConfig:
        return SyntheticConfig(resolve_recipe(self.recipe, base), self.step_s, self.lag_tau_s, self.noise_sigma, self.seed)


class DatasetSpec(Strict):
    """Either a synthetic series or a CSV file, windowed with ``lookback``."""

    synthetic: SynthSpec | None = None
    csv: str | None = None
    recipe: Union[str, dict, None] = None
    lookback: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("exactly one of 'synthetic' or 'csv' must be given")
        if self.csv is not None and self.recipe is None:
            raise ValueError("'recipe' is required with 'csv'")
        return self

    def build(self, base: Path | None = None) -> SeriesDataset:
        if self.synthetic is not None:
            cfg = self.synthetic.synthetic_config(base)
            return prepare(synthesize(cfg), self.lookback, cfg.recipe)
        path = Path(self.csv)
        if base is not None and not path.is_absolute():
            path = base / path
        return prepare(load_csv(path), self.lookback, resolve_recipe(self.recipe, base))


class LossSpec(Strict):
    strategy: Literal["data_only", "fixed", "uncertainty", "rba"] = "data_only"
    # alias keeps the JSON key "lambda" while avoiding the Python keyword
    lam: float | None = Field(None, alias="lambda", ge=0, le=1)
    eta: float = Field(DEFAULT_ETA, gt=0, le=1)

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class TrainSpec(Strict):
    max_epochs: int = Field(50, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float | None = Field(None, gt=0)
    patience: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _patience(self):
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        return self

    def config(self, seed: int, loss: LossSpec | None = None) -> TrainConfig:
        from .losses import LossConfig

        lc = LossConfig(loss.strategy, loss.lam, loss.eta) if loss is not None else LossConfig()
        return TrainConfig(self.max_epochs, self.batch_size, self.lr, self.patience, seed, lc)


class TrainingNoiseSpec(Strict):
    """Optional noisy-sensor training protocol; rows are labeled ``noisy_train``."""

    sigma: float = Field(ge=0, le=1)
    seed: int = 0


class SynthCommand(Strict):
    synthetic: SynthSpec


class TrainCommand(Strict):
    dataset: DatasetSpec
    family: str
    tier: int = Field(DESK_TIERS[0], ge=1)
    seed: int = 0
    loss: LossSpec = LossSpec()
    train: TrainSpec = TrainSpec()
    lambda_grid: tuple[float, ...] = LAMBDA_GRID

    @field_validator("family")
    @classmethod
    def _family(cls, v):
        if v not in FAMILIES:
            raise ValueError(f"unknown family {v!r}; expected one of {FAMILIES}")
        return v


class BenchmarkCommand(Strict):
    """Benchmark plan: model matrix, seeds and robustness sweep settings."""

    dataset: DatasetSpec
    families: tuple[str, ...] = FAMILIES + CLASSICAL
    strategies: tuple[Literal["data_only", "fixed", "uncertainty", "rba"], ...] = STRATEGIES
    tiers: tuple[int, ...] = DESK_TIERS
    seeds: tuple[int, ...] = (0,)
    train: TrainSpec = TrainSpec()
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    eta: float = Field(DEFAULT_ETA, gt=0, le=1)
    blend: bool = True
    sigmas: tuple[float, ...] = SIGMA_GRID
    modes: tuple[Literal["input_only", "system_wide"], ...] = ("input_only", "system_wide")
    noise_seed: int = 0
    training_noise: TrainingNoiseSpec | None = None

    @field_validator("families")
    @classmethod
    def _families(cls, v):
        bad = [f for f in v if f not in FAMILIES and f not in CLASSICAL]
        if bad or not v:
            raise ValueError(f"unknown families {bad}; expected from {FAMILIES + CLASSICAL}")
        return v

    @field_validator("seeds", "tiers", "strategies")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v

    @field_validator("sigmas")
    @classmethod
    def _sigmas(cls, v):
        if any(not 0.0 <= s <= 1.0 for s in v):
            raise ValueError("noise levels must lie in [0, 1]")
        return v

    @field_validator("lambda_grid")
    @classmethod
    def _grid(cls, v):
        if not v or any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("lambda grid must be non-empty with values in [0, 1]")
        return v


class SourceSpec(Strict):
    """Pre-trained model: an existing checkpoint file, or a model to pre-train."""

    checkpoint: str | None = None
    family: str | None = None
    tier: int = Field(DESK_TIERS[0], ge=1)
    dataset: DatasetSpec | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.checkpoint is None and (self.family is None or self.dataset is None):
            raise ValueError("give 'checkpoint', or 'family' together with 'dataset'")
        if self.family is not None and self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        return self


class TransferCommand(Strict):
    source: SourceSpec
    target: DatasetSpec
    strategies: tuple[Literal["baseline_eval", "linear_probe", "full_finetune"], ...] = (
        "baseline_eval", "linear_probe", "full_finetune")
    seeds: tuple[int, ...] = (0,)
    train: TrainSpec = TrainSpec()
    probe_lr: float = Field(1e-2, gt=0)
    finetune_lr_factor: float = Field(0.1, gt=0, le=1)

    @field_validator("seeds", "strategies")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v


Command = TypeVar("Command", bound=Strict)


def _key(loc: tuple) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(model: type[Command], data: dict) -> Command:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigKeyError(_key(err["loc"]), err["msg"]) from None


def load_config(model: type[Command], path: str | Path) -> Command:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigKeyError("--config", f"file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigKeyError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigKeyError("<root>", "top level must be a JSON object")
    return parse_config(model, data)
