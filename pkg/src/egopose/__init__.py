"""Full-body pose estimation from sparse, intermittently visible head and hand tracking."""

__version__ = "0.1.0"
