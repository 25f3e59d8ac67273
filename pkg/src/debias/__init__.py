"""Learn non-negative outcome weights that track durable treatment effects while
suppressing latent confounding in longitudinal data."""

__version__ = "0.1.0"
