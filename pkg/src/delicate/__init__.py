"""Diachronic entity linking with type- and time-aware candidate re-ranking."""

__version__ = "0.1.0"
