"""Gait-based user recognition from headphone accelerometer streams."""

__version__ = "0.1.0"
