"""Multilingual radiology report summarization toolkit."""

__version__ = "0.1.0"
