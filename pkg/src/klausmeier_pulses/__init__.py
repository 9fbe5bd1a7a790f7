"""Pulse-location dynamics, quasi-steady spectra and hybrid cascades for the extended Klausmeier model."""

__version__ = "0.1.0"
