import numpy as np
import pytest

from pifcast.data import SyntheticConfig, prepare, synthesize
from pifcast.prior import Recipe, default_recipe

HOUR = 3600.0


@pytest.fixture
def reference_recipe():
    """Recipe used throughout the worked examples."""
    return Recipe.from_hours([20.0, -40.0, -10.0, 25.0], [0, 2, 6, 8, 20, 22, 30], name="reference")


@pytest.fixture(scope="session")
def small_dataset():
    """Short default-recipe series with a 10-sample lookback (fast to train on)."""
    r = default_recipe()
    raw = synthesize(SyntheticConfig(r, step=120.0))
    return prepare(raw, 10, r)


def random_recipe(rng: np.random.Generator) -> Recipe:
    setpoints = rng.uniform(-60.0, 40.0, size=4)
    gaps = rng.uniform(0.1, 10.0, size=6)
    bounds = rng.uniform(0.0, 5.0) + np.concatenate([[0.0], np.cumsum(gaps)])
    return Recipe.from_hours(setpoints.tolist(), bounds.tolist(), name="fuzz")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
