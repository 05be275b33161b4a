"""Actor-centric relation graphs for spatio-temporal action detection on synthetic clips."""

__version__ = "0.1.0"
