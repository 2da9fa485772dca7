"""Collective spin wave coupled to a single cavity mode: spectra, read-out
dynamics, fitting and detection statistics."""

__version__ = "0.1.0"
