"""BEV instance prediction post-processing toolkit."""

__version__ = "1.0.0"
