"""Neural-network training with simulated-annealing acceptance of SGD steps."""

__version__ = "0.1.0"
