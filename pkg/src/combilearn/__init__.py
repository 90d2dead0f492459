"""Combined trajectory imitation and RL-tuned force control for planar insertion."""

__version__ = "0.1.0"
