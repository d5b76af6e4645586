"""Toolkit for training, formally verifying, and stress-testing stochastic
neural control barrier functions on control-affine SDE systems."""

__version__ = "0.1.0"
