"""Meta-learning laboratory for constrained tabular reinforcement learning."""

__version__ = "0.1.0"
