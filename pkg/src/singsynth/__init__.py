"""Singing voice synthesis at desk scale: score to vocoder-ready features."""

__version__ = "0.1.0"
