"""Multi-loss snapshot ensemble (MLSE) for offline signature verification."""

__version__ = "0.1.0"
