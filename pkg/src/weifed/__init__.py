"""Federated intrusion-detection simulator with targeted poisoning and Weibull-based client filtering."""

__version__ = "0.1.0"
