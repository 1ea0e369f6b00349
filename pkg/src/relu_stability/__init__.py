"""Stability of GD minima for shallow ReLU networks: sharpness, stability norms and certificates."""
__version__ = "0.1.0"
