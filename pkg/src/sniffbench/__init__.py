"""Rising-window early-classification benchmark for electronic-nose data."""

__version__ = "0.1.0"
