"""Ride-log processing toolkit.

Turns raw smartphone sensor logs (GPS, accelerometer, gyroscope) into
road-segment driving norms, per-driver behavior features, and driver
clusters, with a built-in synthetic ride generator for end-to-end testing.
"""

__version__ = "0.1.0"


class RidekitError(Exception):
    """Base class for all errors raised by this package."""
