"""Joint Bayesian spike deconvolution and spatial ensemble clustering of calcium traces."""

__version__ = "0.1.0"
