"""Differentiable architecture search with Beta-Decay regularization, at desk scale."""

__version__ = "0.1.0"
