"""PIDM: probabilistic interaction dynamics for dyadic face-to-face settings."""
__version__ = "0.1.0"
