"""GAN-extended training data for grayscale traffic-sign classification."""

__version__ = "0.1.0"
