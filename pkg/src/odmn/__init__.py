"""Order-dependency monotonic network for multi-horizon lifetime-value prediction."""
__version__ = "0.1.0"
