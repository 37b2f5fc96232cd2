"""Monte Carlo laws of the running minimum of additive-noise SDEs on [0, 1]."""

__version__ = "0.1.0"
