"""Data pipeline and evaluation harness for masked language models."""

__version__ = "0.1.0"
