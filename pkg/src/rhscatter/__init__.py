"""Recovering a planar Schrodinger potential from its scattering data at one energy.

The forward side tabulates data on a two-circle spectral contour and on the
exterior of the annulus. The inverse side solves the jump system and recovers
the potential. An experimental module evolves the data in time.
"""

__version__ = "0.1.0"
