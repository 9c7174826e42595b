"""High-dimensional second-order U- and V-statistics with index-dependent kernels."""

__version__ = "0.1.0"
