"""Anomaly detection in mammogram patches with autoencoders and RAT-SPN density models."""

__version__ = "0.1.0"
