"""Radio map estimation: synthetic map generation, a completion autoencoder
trained with a small numpy network core, interpolation baselines and a
Monte-Carlo benchmark harness."""

__version__ = "0.1.0"
