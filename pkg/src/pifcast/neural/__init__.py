"""Neural forecasters sharing one interface, plus size-matched construction."""
from __future__ import annotations

import numpy as np

from ..data import SeriesDataset, Split
from .base import (InfeasibleTierError, ModelError, NeuralModel, SizeTier, load_checkpoint,
                   save_checkpoint)
from .kan import CKAN, KAN
from .mlp import MLP
from .recurrent import LEM, LSTM, RNN
from .transformer import Transformer

FAMILY_CLASSES: dict[str, type[NeuralModel]] = {
    "MLP": MLP,
    "RNN": RNN,
    "LSTM": LSTM,
    "Transformer": Transformer,
    "KAN": KAN,
    "cKAN": CKAN,
    "LEM": LEM,
}
FAMILIES = tuple(FAMILY_CLASSES)
DESK_TIERS = (2000, 8000, 30000)
HEADLINE_TIER = 30000

_ALIASES = {"CKAN": "cKAN", "ckan": "cKAN"}


def family_class(family: str) -> type[NeuralModel]:
    family = _ALIASES.get(family, family)
    if family not in FAMILY_CLASSES:
        raise ModelError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return FAMILY_CLASSES[family]


def select_hparams(family: str, tier: SizeTier | int, lookback: int) -> dict:
    """Deterministic search over each family's candidate grid.

    In-tolerance candidates win, then the family's preferred settings, then
    the smallest count gap.
    """
    tier = tier if isinstance(tier, SizeTier) else SizeTier(int(tier))
    cls = family_class(family)
    best = None
    for hp in cls.candidates(lookback, tier.target):
        count = cls.param_count(lookback, **hp)
        key = (not tier.accepts(count), cls.preference(hp), abs(count - tier.target), count)
        if best is None or key < best[0]:
            best = (key, hp, count)
    if best is None or not tier.accepts(best[2]):
        got = "none" if best is None else best[2]
        raise InfeasibleTierError(
            f"{family}: no configuration within {tier.tolerance:.0%} of {tier.target} parameters "
            f"(closest: {got})"
        )
    return dict(best[1])


def build(family: str, tier: SizeTier | int, lookback: int, seed: int = 0) -> NeuralModel:
    tier = tier if isinstance(tier, SizeTier) else SizeTier(int(tier))
    hp = select_hparams(family, tier, lookback)
    return family_class(family)(lookback, seed=seed, tier=tier.target, **hp)


def predict_series(model: NeuralModel, dataset: SeriesDataset, split: Split = "test") -> np.ndarray:
    """One-step-ahead forecasts over ``split`` in degrees Celsius."""
    if model.lookback != dataset.lookback:
        raise ModelError(f"model lookback {model.lookback} != dataset lookback {dataset.lookback}")
    return dataset.norm.invert(model.predict(dataset.X(split)))


__all__ = [
    "FAMILIES", "FAMILY_CLASSES", "DESK_TIERS", "HEADLINE_TIER", "NeuralModel", "SizeTier", "ModelError",
    "InfeasibleTierError", "build", "select_hparams", "family_class", "predict_series", "save_checkpoint",
    "load_checkpoint", "MLP", "RNN", "LSTM", "Transformer", "KAN", "CKAN", "LEM",
]
