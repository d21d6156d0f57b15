"""Process-informed forecasting toolkit for staged thermal processes."""

__version__ = "0.1.0"
