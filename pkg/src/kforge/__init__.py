"""Reinforcement-learning kernel search for 1-D residual CNN fault classifiers."""

__version__ = "0.1.0"
