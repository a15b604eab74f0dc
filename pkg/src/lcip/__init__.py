"""Loss-controlled inverse projection toolkit."""

__version__ = "0.1.0"
