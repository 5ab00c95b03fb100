"""Accident scenario generation and motion/accident prediction evaluation."""

__version__ = "0.1.0"
