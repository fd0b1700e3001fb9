"""chanprobe: evaluation metrics and cross-checks for generative wireless channel models."""

__version__ = "0.1.0"
