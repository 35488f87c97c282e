"""Kinodynamic tree planning with a learned flow-matching action sampler."""

__version__ = "0.1.0"
