"""Multi-label video classification with trainable frame pooling, in plain numpy."""

__version__ = "0.1.0"
