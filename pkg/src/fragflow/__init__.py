"""Discrete flow generation over fragmented SMILES with a GA + PPO + bandit
optimization loop on top."""

__version__ = "0.1.0"
