"""Part-assembly planning and learning for procedurally generated chairs."""

__version__ = "0.1.0"
