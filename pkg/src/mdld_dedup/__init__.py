"""Duplicate-device detection for multi-vendor mobile device location data."""

__version__ = "0.1.0"
