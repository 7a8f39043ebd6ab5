"""Audio-driven talking-head generation from a single identity image."""

__version__ = "0.1.0"
