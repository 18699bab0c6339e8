"""Prompt-conditioned mask explanations for zero-shot audio classifiers."""

__version__ = "0.1.0"
