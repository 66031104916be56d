"""Information-theoretic generalization bounds for deep networks."""

__version__ = "0.1.0"
