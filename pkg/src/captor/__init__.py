"""captor: attentive GRU image-caption engine on precomputed feature grids."""

__version__ = "0.1.0"
