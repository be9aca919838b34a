"""Scene-aware video anomaly detection on object-level features."""

__version__ = "0.1.0"
