"""Layout reward environment, metrics and group-relative policy-optimization kit."""

__version__ = "0.1.0"
