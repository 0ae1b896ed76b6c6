"""Cognitive diagnosis with parent-concept and embedding student representations."""

__version__ = "0.1.0"
