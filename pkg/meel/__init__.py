"""Memory-enhanced embedding learning for cross-modal video-text retrieval."""

__version__ = "0.1.0"
