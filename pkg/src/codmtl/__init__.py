"""Tree-distilled multi-task learning for tabular multi-label outcomes."""

__version__ = "0.1.0"
