"""AFT Sieve - Spline-based sieve maximum likelihood for the accelerated failure time model."""

__version__ = "1.0.0"
