"""Cross-view place classification from synthesized scene graphs."""

__version__ = "0.1.0"
