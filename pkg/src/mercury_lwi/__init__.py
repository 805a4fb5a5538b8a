"""Multi-level simulation of UV lasing without inversion in mercury vapor."""

__version__ = "0.1.0"
