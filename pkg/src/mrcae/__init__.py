"""Multi-resolution convolutional autoencoder (MrCAE)."""

__version__ = "0.1.0"
