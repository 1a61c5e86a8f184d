"""Random-forest surrogates of pyrolysis-plant sensors and NOx minimization."""

__version__ = "0.1.0"
