"""Contrastive candidate re-ranking for cross-lingual summarization."""

__version__ = "0.1.0"
