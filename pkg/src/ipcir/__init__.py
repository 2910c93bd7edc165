"""Proxy-fusion retrieval and evaluation over precomputed embeddings."""

__version__ = "0.1.0"
