"""adlab: numerics for exponentially small non-adiabatic transitions.

Library + CLI for driven two-level systems (Landau-Zener style crossings,
superadiabatic projector hierarchies, erf-shaped transition histories,
contour-integral decay rates) and a 1D two-channel Born-Oppenheimer
scattering model with Gaussian transmitted-packet asymptotics.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    asymptotics,
    families,
    linalg2,
    propagate,
    scattering,
    superadiabatic,
)
