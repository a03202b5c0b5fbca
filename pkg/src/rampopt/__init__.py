"""Optimal control of coupling ramps under a bounded control range."""
__version__ = "0.1.0"
