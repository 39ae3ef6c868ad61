"""Understanding-oriented dual-stream video coding."""

__version__ = "0.1.0"
