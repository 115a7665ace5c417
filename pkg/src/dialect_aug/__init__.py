"""Data augmentation for dialect classification: segment removal with frequency masking,
voice-conversion boundaries, an MLP classifier and a repeated random-split harness."""

__version__ = "0.1.0"
