"""Physics-informed networks with a hard momentum-conservation projection."""

__version__ = "0.1.0"
