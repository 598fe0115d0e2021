"""Split convolution: representative k x k path, redundant 1x1 path, attention fusion."""

__version__ = "0.1.0"
