"""Model-inference HTTP gateway with a deterministic stub mode."""

__version__ = "0.1.0"
