"""finslerlab: numerical Finsler geometry and metric-change verification."""

__version__ = "0.1.0"
