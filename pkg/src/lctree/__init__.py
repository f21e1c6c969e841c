"""Log-concave maximum likelihood density estimation on tree spaces.

The package implements density estimation on the BHV tree spaces T3 and
T4: geometry (``treespace``), hull constructions for the smallest
concave majorant of point values (``hull``), numerical and exact
integration (``integrate``), the maximum likelihood estimator
(``mle``), reference densities and samplers (``refdensities``),
clustering with log-concave mixtures (``clustering``), and a command
line interface (``cli``).
"""

__version__ = "0.1.0"

from .treespace import (  # noqa: F401
    T3,
    T4,
    Geodesic,
    TreePoint,
    distance,
    geodesic,
    origin,
    petersen_topology,
    point_on_geodesic,
    tree_point,
)
