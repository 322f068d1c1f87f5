"""Bi-directional query/text label calibration for weakly supervised representation learning."""

__version__ = "0.1.0"
