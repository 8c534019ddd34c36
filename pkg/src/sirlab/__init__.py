"""Sliced inverse regression laboratory."""
__version__ = "0.1.0"
