"""Cropland-class suitability modelling from gridded climate and terrain data."""

__version__ = "0.1.0"
