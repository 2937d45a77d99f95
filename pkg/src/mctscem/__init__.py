"""Model-based planning with MCTS, CEM and an expected-free-energy objective."""

__version__ = "0.1.0"
