"""Time maps, non-degeneracy and periodic orbits for planar radial Hamiltonians."""
__version__ = "0.1.0"
