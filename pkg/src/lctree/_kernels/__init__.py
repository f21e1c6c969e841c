"""Distance kernels with a compiled fast path.

The package always ships the pure NumPy implementations in ``_pure``;
when the Cython extension ``_core`` built alongside the package is
importable, its functions replace the hot ones.  ``BACKEND`` records
which implementation is active, and both remain importable for
benchmarking (``lctree._kernels._pure`` vs ``lctree._kernels._core``).
"""

import numpy as np

from ._pure import (  # noqa: F401
    CAND_COUNT,
    CAND_START,
    CROSS_U,
    K,
    P_SWAP,
    Q_COLS,
    t3_point_to_points,
    t4_point_to_group,
    t4_point_to_points,
)

BACKEND = "pure"

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

if _compiled is not None:
    BACKEND = "cython"

    def t4_point_to_group(a, pu, pv, b, us, vs):  # noqa: F811
        return _compiled.t4_point_to_group(
            int(a), float(pu), float(pv), int(b),
            np.ascontiguousarray(us, dtype=np.float64),
            np.ascontiguousarray(vs, dtype=np.float64),
            CAND_START, CAND_COUNT, P_SWAP, K, Q_COLS, CROSS_U)

    def t4_point_to_points(a, pu, pv, idx, us, vs):  # noqa: F811
        return _compiled.t4_point_to_points(
            int(a), float(pu), float(pv),
            np.ascontiguousarray(idx, dtype=np.int64),
            np.ascontiguousarray(us, dtype=np.float64),
            np.ascontiguousarray(vs, dtype=np.float64),
            CAND_START, CAND_COUNT, P_SWAP, K, Q_COLS, CROSS_U)

def pack_points(points, space):
    """Pack TreePoints into (orthant index, coord, coord) arrays.

    The origin packs as index -1 with zero coordinates.  For T3 the
    second coordinate array is all zeros and the index is the branch.
    """
    from .. import treespace as ts

    n = len(points)
    idx = np.empty(n, dtype=np.int64)
    u = np.zeros(n, dtype=np.float64)
    v = np.zeros(n, dtype=np.float64)
    for i, p in enumerate(points):
        if p.space != space:
            raise ValueError("point space mismatch")
        if p.is_origin:
            idx[i] = -1
        elif space == ts.T3:
            idx[i] = p.orthant
            u[i] = p.coords[0]
        else:
            idx[i] = ts.T4_EDGE_INDEX[p.orthant]
            u[i], v[i] = p.coords
    return idx, u, v


def point_to_points(p, idx, u, v):
    """Distances from TreePoint ``p`` to a packed array of its space."""
    from .. import treespace as ts

    if p.space == ts.T3:
        a = -1 if p.is_origin else p.orthant
        t = 0.0 if p.is_origin else p.coords[0]
        return t3_point_to_points(a, t, idx, u)
    a = -1 if p.is_origin else ts.T4_EDGE_INDEX[p.orthant]
    pu, pv = (0.0, 0.0) if p.is_origin else p.coords
    return t4_point_to_points(a, pu, pv, idx, u, v)
