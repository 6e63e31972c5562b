"""Channel-wise deep cost prediction from claims time series, with entropy-based stratification."""

__version__ = "0.1.0"
