"""Optimal observation attacks on reinforcement-learning agents.

Exact tabular attack solvers, gradient-attack baselines, learned DDPG-style
adversaries, smoothness bounds on attack impact, and a small numpy neural
network stack to train the agents being attacked.
"""

__version__ = "0.1.0"
