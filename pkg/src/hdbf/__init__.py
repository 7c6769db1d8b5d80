"""Scale- and shift-invariant high-dimensional two-sample location tests."""

__version__ = "0.1.0"
