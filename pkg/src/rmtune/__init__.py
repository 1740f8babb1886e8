"""Multi-head binary semantic decoding with unsupervised risk-minimisation tuning."""

__version__ = "0.1.0"
