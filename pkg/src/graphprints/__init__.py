"""Graphlet-based anomaly detection on windows of network flows."""

__version__ = "0.1.0"
