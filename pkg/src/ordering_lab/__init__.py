"""Deterministic lab for data-ordering effects on a modular-addition transformer."""

__version__ = "0.1.0"
