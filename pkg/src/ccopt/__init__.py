"""Coverage and capacity optimisation of cellular antenna settings."""

__version__ = "0.1.0"
