"""Guidance, navigation and control for a spacecraft descending to a rotating asteroid."""

__version__ = "0.1.0"
