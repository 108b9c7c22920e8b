"""Opinion-aware answer generation for review-driven product question answering."""

__version__ = "0.1.0"
