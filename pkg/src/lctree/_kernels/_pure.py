"""Pure NumPy implementations of the distance kernels.

These are the reference implementations; ``lctree._kernels`` swaps in
the compiled Cython twins when they are available.  All functions work
on packed point arrays: an orthant-index array (-1 for the origin) and
coordinate arrays, with coordinates in canonical (ascending-axis)
order.

The T4 unfolding tables built here are flat array versions of
``lctree.treespace._CANDIDATES`` and are shared by the compiled
backend.
"""

from __future__ import annotations

import numpy as np

from .. import treespace as _ts

# ---------------------------------------------------------------------------
# Flattened candidate tables.
#
# For ordered orthant pair (a, b) the candidates are rows
# CAND_START[a*15+b] .. +CAND_COUNT[a*15+b] of:
#   P_SWAP[c]  : 1 if p embeds as (pv, pu), else (pu, pv)
#   K[c]       : number of crossings (1..3)
#   Q_COLS[c]  : (2, 2); embedded q = qu * Q_COLS[c, 0] + qv * Q_COLS[c, 1]
#   CROSS_U[c] : (3, 2); unit vector of crossing ray m (rows past K unused)
# ---------------------------------------------------------------------------

_pairs = []
for _a in range(15):
    for _b in range(15):
        _pairs.append(_ts._CANDIDATES.get((_a, _b), []))

_NC = sum(len(c) for c in _pairs)
CAND_START = np.zeros(225, dtype=np.int64)
CAND_COUNT = np.zeros(225, dtype=np.int64)
P_SWAP = np.zeros(_NC, dtype=np.int8)
K = np.zeros(_NC, dtype=np.int8)
Q_COLS = np.zeros((_NC, 2, 2), dtype=np.float64)
CROSS_U = np.zeros((_NC, 3, 2), dtype=np.float64)

_c = 0
for _i, _cands in enumerate(_pairs):
    CAND_START[_i] = _c
    CAND_COUNT[_i] = len(_cands)
    for _cand in _cands:
        P_SWAP[_c] = 1 if _cand.p_swap else 0
        K[_c] = len(_cand.cross_axes)
        Q_COLS[_c, 0] = _cand.q_cols[0]
        Q_COLS[_c, 1] = _cand.q_cols[1]
        for _m in range(len(_cand.cross_axes)):
            CROSS_U[_c, _m] = _ts._U[(_m + 1) % 4]
        _c += 1


def t4_point_to_group(a: int, pu: float, pv: float,
                      b: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Distances from one T4 point to many points of one orthant.

    Parameters
    ----------
    a : int
        Canonical orthant index of the source point, or -1 for the origin.
    pu, pv : float
        Canonical coordinates of the source point.
    b : int
        Orthant index of the target points.
    us, vs : ndarray
        Canonical coordinates of the target points.
    """
    target_norm = np.hypot(us, vs)
    if a < 0:
        return target_norm
    best = np.hypot(pu, pv) + target_norm          # cone path
    if a == b:
        return np.hypot(us - pu, vs - pv)
    lo = CAND_START[a * 15 + b]
    for c in range(lo, lo + CAND_COUNT[a * 15 + b]):
        pe0, pe1 = (pv, pu) if P_SWAP[c] else (pu, pv)
        qe0 = us * Q_COLS[c, 0, 0] + vs * Q_COLS[c, 1, 0]
        qe1 = us * Q_COLS[c, 0, 1] + vs * Q_COLS[c, 1, 1]
        valid = np.ones(us.shape, dtype=bool)
        for m in range(K[c]):
            ux, uy = CROSS_U[c, m]
            sp = ux * pe1 - uy * pe0
            if sp > 1e-12:
                valid[:] = False
                break
            sq = ux * qe1 - uy * qe0
            den = sp - sq
            ok = (sq >= -1e-12) & (den < -1e-300)
            den = np.where(ok, den, -1.0)
            t = sp / den
            r = ux * (pe0 + t * (qe0 - pe0)) + uy * (pe1 + t * (qe1 - pe1))
            valid &= ok & (r >= -1e-12)
            if not valid.any():
                break
        if valid.any():
            length = np.hypot(qe0 - pe0, qe1 - pe1)
            np.minimum(best, np.where(valid, length, np.inf), out=best)
    return best


def t4_point_to_points(a: int, pu: float, pv: float,
                       idx: np.ndarray, us: np.ndarray,
                       vs: np.ndarray) -> np.ndarray:
    """Distances from one T4 point to a packed point array."""
    out = np.empty(len(idx), dtype=np.float64)
    origin_mask = idx < 0
    if origin_mask.any():
        out[origin_mask] = np.hypot(pu, pv)
    for b in range(15):
        mask = idx == b
        if mask.any():
            out[mask] = t4_point_to_group(a, pu, pv, b, us[mask], vs[mask])
    return out


def t3_point_to_points(a: int, pt: float,
                       idx: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Distances from one T3 point to a packed point array."""
    if a < 0:
        return ts.copy()
    return np.where(idx == a, np.abs(ts - pt), ts + pt)
