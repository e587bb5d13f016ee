"""Self-healing connectivity for dual-modem offshore vessel CPEs."""

__version__ = "0.1.0"
