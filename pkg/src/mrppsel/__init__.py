"""Distance-based tests, variable importance and backward selection."""
__version__ = "0.1.0"
