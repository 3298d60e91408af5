"""Sequential visual-reasoning problems solved by relation networks optimized at test time."""

__version__ = "0.1.0"
