"""Joint link scheduling and transmit power control for dense ad hoc networks."""

__version__ = "0.1.0"
