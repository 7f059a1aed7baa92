"""Compact dual-eye-channel gaze regression: CPU training, person-exclusive
evaluation, resolution-degradation tooling, and compute-cost accounting."""

__version__ = "0.1.0"
