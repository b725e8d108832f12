"""Delay-Doppler channel prediction lab."""

__version__ = "0.1.0"
