"""Wasserstein GAN training and GAN-based anomaly detection on dense networks."""

__version__ = "0.1.0"
