"""Critical illness pricing under Markov and semi-Markov breast cancer models."""

__version__ = "0.1.0"
