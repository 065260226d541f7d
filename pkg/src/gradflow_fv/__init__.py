"""Structure-preserving finite volumes for aggregation-diffusion equations."""
__version__ = "0.1.0"
