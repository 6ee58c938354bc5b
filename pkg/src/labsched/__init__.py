"""Offline reinforcement learning for ICU lab-test measurement scheduling."""

__version__ = "0.1.0"
