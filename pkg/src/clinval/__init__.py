"""Curate validator training data, run LM validators, and score them against physicians."""

__version__ = "0.1.0"
