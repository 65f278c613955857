"""Toolkit for zero-shot cross-schema parsing of food orders."""

__version__ = "0.1.0"
