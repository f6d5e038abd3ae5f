"""Open-set recognition toolkit: distance-based classifiers with background-class regularization."""

__version__ = "0.1.0"
