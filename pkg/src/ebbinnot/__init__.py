"""Frame-based detection, classification and tracking on event-camera data,
with analytic and instrumented computational-cost models."""

__version__ = "0.1.0"
