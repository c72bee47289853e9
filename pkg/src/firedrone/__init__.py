"""Wildfire drone-swarm planning: spread simulation, convex surrogates, robust allocation."""

__version__ = "0.1.0"
