"""Thin films coupled through a perforated mid-plane (a "sieve").

The package numerically realizes the variational limit of a pair of thin
nonlinear-elastic layers joined across a periodically perforated interface:
cell problems for the interfacial energy densities, relaxation machinery for
the in-plane limit densities, scaling-regime classification of the geometric
parameter sequences, assembly of the limit functional, and a direct voxel
simulation of the 3D film used to track the approach to the limit.
"""

__version__ = "0.1.0"

from . import cell, cli, energy, mesh, regime, solver  # noqa: E402,F401
