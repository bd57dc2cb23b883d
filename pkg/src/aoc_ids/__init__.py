"""Online anomaly-based intrusion detection with a contrastively trained autoencoder."""

__version__ = "0.1.0"
