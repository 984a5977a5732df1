"""Adversarial road-patch toolkit: scene synthesis, toy victims, and
ground-plane patch optimization with depth-based texture projection."""

__version__ = "0.1.0"
