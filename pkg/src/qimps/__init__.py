"""Circuit-based infinite MPS toolkit."""

__version__ = "0.1.0"
