"""Asynchronous document-oriented prover interaction at desk scale."""

__version__ = "0.1.0"
