"""Multi-agent trajectory prediction with typed, edge-featured graph attention."""

__version__ = "0.1.0"
