"""SRB density gradient along trajectories of hyperbolic maps."""

__version__ = "0.1.0"
