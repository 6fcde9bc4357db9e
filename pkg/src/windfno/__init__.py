"""Fourier neural operator surrogate for urban wind fields, with a desk-scale data generator."""

__version__ = "0.1.0"
