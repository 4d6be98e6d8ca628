"""Temporal-logic classifier-in-the-loop toolkit: monitor, infer, simulate, verify."""

__version__ = "0.1.0"
