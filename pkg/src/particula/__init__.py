"""particula: a particle-simulation toolkit.

AoSoA particle storage, binning and neighbor lists, simulated-rank domain
decomposition with halo exchange, B-spline particle-grid interpolation,
pencil-decomposed 3-D FFTs, SPME electrostatics, and two proxy
applications: a Lennard-Jones mini-MD and an electrostatic PIC code with
an exactly-energy-conserving implicit step and sparse-grid-combination
deposition.
"""

from . import (aosoa, binning, cli, decomp, geometry, grid, longrange, md,
               neighbors, pfft, pic)

__all__ = ["aosoa", "binning", "cli", "decomp", "geometry", "grid",
           "longrange", "md", "neighbors", "pfft", "pic"]

__version__ = "0.1.0"
