"""One-action micro-submissions: snippet in, upstream pull request out."""

__version__ = "0.1.0"
