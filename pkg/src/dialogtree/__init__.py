"""Controllable task-oriented dialog engine over expert-authored dialog graphs."""

__version__ = "0.1.0"
