"""Cross-domain sequential recommender with frozen image-embedding fusion."""

__version__ = "0.1.0"
