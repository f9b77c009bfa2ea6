"""Figure rendering for qtt simulation CSV outputs."""

__version__ = "0.1.0"
