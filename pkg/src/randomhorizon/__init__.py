"""Monte Carlo solver for exponential-utility BSDEs with a singular default intensity."""

__version__ = "0.1.0"
