"""Dark channel prior dehazing with an unsupervised DCP-energy-trained network."""

__version__ = "0.1.0"
