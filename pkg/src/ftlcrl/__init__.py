"""Continual model-based RL with a follow-the-leader sparse world model and CEM planning."""

__version__ = "0.1.0"
