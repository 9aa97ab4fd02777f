"""Simulated visuotactile sensing: tactile depth from two-step photometric stereo and stereo depth through a semi-transparent membrane."""

__version__ = "0.1.0"
