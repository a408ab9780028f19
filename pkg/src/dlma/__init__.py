"""DLMA: distributed deep-RL medium access with feedback recovery."""

__version__ = "0.1.0"
