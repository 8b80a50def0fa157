"""Incomplete and modified Taylor schemes for differential equations driven
by fractional Brownian motion in the Young regime."""

__version__ = "0.1.0"
