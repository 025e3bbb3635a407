"""Delay-aware dynamic power control for D2D links under carrier sensing."""

__version__ = "0.1.0"
