"""Scene- and agent-aware transformer trajectory forecasting."""

__version__ = "0.1.0"
