"""Figure rendering for msv1-results evaluation documents."""

__version__ = "0.1.0"
