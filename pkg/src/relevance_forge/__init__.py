"""Two-stage query/item relevance pipeline: term-matching recall, then classifier filtering."""

__version__ = "0.1.0"
