"""Classifier-pruned token trees for speculative decoding, on synthetic model pairs."""

__version__ = "0.1.0"
