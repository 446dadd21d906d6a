"""Neural-surrogate multiscale topology optimization with Voronoi cellular microstructures."""

__version__ = "0.1.0"
