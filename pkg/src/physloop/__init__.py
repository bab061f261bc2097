"""physloop: desk-scale physics-in-the-loop human-scene interaction toolkit."""

__version__ = "0.1.0"
