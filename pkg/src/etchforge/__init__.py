"""etchforge: time-to-failure labels, degradation features and benchmarked models for etch chambers."""

__version__ = "0.1.0"
