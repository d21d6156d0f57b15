"""Recipe-derived piecewise-linear temperature prior.

A lyophilization recipe is a sequence of ramps and holds: freeze ramp, freeze
hold, primary-drying ramp, primary-drying hold, secondary-drying ramp,
secondary-drying hold.  Four setpoints and seven boundary times describe it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

N_SETPOINTS = 4
N_BOUNDARIES = 7
HOUR = 3600.0

_RECIPE_KEYS = {"name", "time_unit", "setpoints", "boundaries"}
_TIME_UNITS = {"seconds": 1.0, "hours": HOUR}


class RecipeError(ValueError):
    """Base class for recipe validation and parsing failures."""


class MissingFieldError(RecipeError):
    pass


class UnknownFieldError(RecipeError):
    pass


class CardinalityError(RecipeError):
    pass


class MonotonicityError(RecipeError):
    pass


class PriorDomainError(ValueError):
    """Raised when the prior is evaluated outside [t0, t6]."""


@dataclass(frozen=True)
class Recipe:
    """Setpoints (degrees C) and phase boundaries (seconds) of one recipe."""

    setpoints: tuple[float, ...]
    boundaries: tuple[float, ...]
    name: str = "recipe"

    def __post_init__(self) -> None:
        sp = tuple(float(v) for v in self.setpoints)
        bd = tuple(float(v) for v in self.boundaries)
        if len(sp) != N_SETPOINTS:
            raise CardinalityError(f"setpoints: expected {N_SETPOINTS} values, got {len(sp)}")
        if len(bd) != N_BOUNDARIES:
            raise CardinalityError(f"boundaries: expected {N_BOUNDARIES} values, got {len(bd)}")
        if not all(math.isfinite(v) for v in sp + bd):
            raise RecipeError("setpoints and boundaries must be finite")
        for k in range(N_BOUNDARIES - 1):
            if not bd[k] < bd[k + 1]:
                raise MonotonicityError(
                    f"boundaries must be strictly increasing: t{k}={bd[k]} >= t{k + 1}={bd[k + 1]}"
                )
        object.__setattr__(self, "setpoints", sp)
        object.__setattr__(self, "boundaries", bd)

    @classmethod
    def from_hours(cls, setpoints: Sequence[float], boundaries_h: Sequence[float], name: str = "recipe") -> "Recipe":
        return cls(tuple(setpoints), tuple(b * HOUR for b in boundaries_h), name)

    @property
    def start(self) -> float:
        return self.boundaries[0]

    @property
    def end(self) -> float:
        return self.boundaries[-1]

    @property
    def duration(self) -> float:
        return self.end - self.start

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints (times, values) of the piecewise-linear curve."""
        y0, y1, y2, y3 = self.setpoints
        return np.array(self.boundaries), np.array([y0, y1, y1, y2, y2, y3, y3])


@dataclass(frozen=True)
class PriorTrajectory:
    times: np.ndarray
    values: np.ndarray
    recipe_name: str

    def __post_init__(self) -> None:
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        self.times.flags.writeable = False
        self.values.flags.writeable = False


def _segment_value(recipe: Recipe, t: float) -> float:
    y0, y1, y2, y3 = recipe.setpoints
    t0, t1, t2, t3, t4, t5, t6 = recipe.boundaries
    if t < t1:
        return y0 + (y1 - y0) / (t1 - t0) * (t - t0)
    if t < t2:
        return y1
    if t < t3:
        return y1 + (y2 - y1) / (t3 - t2) * (t - t2)
    if t < t4:
        return y2
    if t < t5:
        return y2 + (y3 - y2) / (t5 - t4) * (t - t4)
    return y3


def _segment_values(recipe: Recipe, ts: np.ndarray) -> np.ndarray:
    y0, y1, y2, y3 = recipe.setpoints
    t0, t1, t2, t3, t4, t5, t6 = recipe.boundaries
    conds = [ts < t1, ts < t2, ts < t3, ts < t4, ts < t5]
    choices = [
        y0 + (y1 - y0) / (t1 - t0) * (ts - t0),
        np.full_like(ts, y1),
        y1 + (y2 - y1) / (t3 - t2) * (ts - t2),
        np.full_like(ts, y2),
        y2 + (y3 - y2) / (t5 - t4) * (ts - t4),
    ]
    return np.select(conds, choices, default=y3)


def evaluate_prior(recipe: Recipe, t: float) -> float:
    """Idealized temperature at time ``t`` (seconds).

    Segments are half-open ``[t_k, t_k+1)`` except the final hold, which also
    includes ``t6``.
    """
    t = float(t)
    if not recipe.start <= t <= recipe.end:
        raise PriorDomainError(f"t={t} outside the recipe interval [{recipe.start}, {recipe.end}]")
    return _segment_value(recipe, t)


def sample_prior(recipe: Recipe, times: Sequence[float] | np.ndarray) -> PriorTrajectory:
    ts = np.array(times, dtype=np.float64).reshape(-1)
    if ts.size == 0:
        raise PriorDomainError("times must be non-empty")
    bad = np.flatnonzero((ts < recipe.start) | (ts > recipe.end) | ~np.isfinite(ts))
    if bad.size:
        i = int(bad[0])
        raise PriorDomainError(
            f"times[{i}]={ts[i]} outside the recipe interval [{recipe.start}, {recipe.end}]"
        )
    if np.any(np.diff(ts) < 0):
        raise PriorDomainError("times must be nondecreasing")
    return PriorTrajectory(ts, _segment_values(recipe, ts), recipe.name)


def prior_values(recipe: Recipe, times: np.ndarray) -> np.ndarray:
    """Vectorized prior for already-validated, in-range times."""
    return sample_prior(recipe, times).values.copy()


def recipe_to_dict(recipe: Recipe, time_unit: str = "seconds") -> dict:
    if time_unit not in _TIME_UNITS:
        raise RecipeError(f"time_unit must be one of {sorted(_TIME_UNITS)}")
    f = _TIME_UNITS[time_unit]
    return {
        "name": recipe.name,
        "time_unit": time_unit,
        "setpoints": list(recipe.setpoints),
        "boundaries": [b / f for b in recipe.boundaries],
    }


def recipe_from_dict(data: dict) -> Recipe:
    if not isinstance(data, dict):
        raise RecipeError("recipe must be a JSON object")
    unknown = set(data) - _RECIPE_KEYS
    if unknown:
        raise UnknownFieldError(f"unknown recipe key(s): {', '.join(sorted(unknown))}")
    for key in ("name", "time_unit", "setpoints", "boundaries"):
        if key not in data:
            raise MissingFieldError(f"recipe is missing required key '{key}'")
    unit = data["time_unit"]
    if unit not in _TIME_UNITS:
        raise RecipeError(f"time_unit: expected 'seconds' or 'hours', got {unit!r}")
    for key in ("setpoints", "boundaries"):
        vals = data[key]
        if not isinstance(vals, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals
        ):
            raise RecipeError(f"{key}: expected an array of numbers")
    if not isinstance(data["name"], str):
        raise RecipeError("name: expected a string")
    f = _TIME_UNITS[unit]
    boundaries = tuple(float(b) * f for b in data["boundaries"]) if f != 1.0 else tuple(data["boundaries"])
    return Recipe(tuple(data["setpoints"]), boundaries, data["name"])


def load_recipe(path: str | Path) -> Recipe:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecipeError(f"{path}: invalid JSON ({exc})") from exc
    return recipe_from_dict(data)


def save_recipe(recipe: Recipe, path: str | Path) -> None:
    # Seconds keep the float round-trip exact; repr-based JSON floats are lossless.
    Path(path).write_text(json.dumps(recipe_to_dict(recipe), indent=2) + "\n", encoding="utf-8")


def default_recipe() -> Recipe:
    """Desk-scale primary recipe (hours): load at 25, freeze to -40, dry at -10, finish at 20.

    The final ramp sits late enough that a 60/20/20 chronological split puts
    part of it in the test segment, and the loading temperature keeps every
    later setpoint inside the range seen during training.
    """
    return Recipe.from_hours([25.0, -40.0, -10.0, 20.0], [0, 2, 6, 8, 22, 26, 30], name="primary")


def secondary_recipe() -> Recipe:
    """Second product: different setpoints and a longer final (secondary drying) hold."""
    return Recipe.from_hours([30.0, -45.0, -20.0, 25.0], [0, 1.5, 5, 8, 18, 21, 36], name="secondary")
