"""Segment-level voice activity detection with stochastic gates."""
__version__ = "0.1.0"
