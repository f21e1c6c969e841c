"""Geometry of the BHV tree spaces T3 and T4.

T3 is the space of trees with three leaves: three half-lines (orthants
0, 1, 2) glued at a common origin.  A point is a branch index together
with a distance from the origin.

T4 is the space of trees with four leaves: 15 two-dimensional quadrants
glued along 10 shared boundary axes.  The gluing pattern is the Petersen
graph: axes are the 10 vertices, quadrants are the 15 edges, and two
quadrants share an axis exactly when the corresponding edges share a
vertex.  We fix the labelling with outer cycle 0-1-2-3-4, spokes i--i+5,
and inner 5-cycle 5-7-9-6-8-5; an orthant is named by its (sorted) pair
of axis labels and its two coordinates are listed in ascending axis
order.

Both spaces are CAT(0); geodesics are unique.  In T4 a geodesic either
stays inside the union of at most four quadrants crossed in sequence
(computed here by unfolding the quadrants isometrically into the plane)
or passes through the origin (a "cone path" of length |p| + |q|).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

T3 = "T3"
T4 = "T4"

# Orthants of T4: the 15 edges of the Petersen graph, in lexicographic
# order.  Outer 5-cycle 0-1-2-3-4, spokes i--i+5, inner cycle 5-7-9-6-8.
T4_EDGES: Tuple[Tuple[int, int], ...] = (
    (0, 1), (0, 4), (0, 5),
    (1, 2), (1, 6),
    (2, 3), (2, 7),
    (3, 4), (3, 8),
    (4, 9),
    (5, 7), (5, 8),
    (6, 8), (6, 9),
    (7, 9),
)

T4_EDGE_INDEX = {e: i for i, e in enumerate(T4_EDGES)}

# axis label -> indices of the three orthants having that axis on their
# boundary (each Petersen vertex has degree 3).
T4_AXIS_ORTHANTS: Tuple[Tuple[int, ...], ...] = tuple(
    tuple(i for i, e in enumerate(T4_EDGES) if a in e) for a in range(10)
)

OrthantId = Union[int, Tuple[int, int]]


def petersen_topology() -> dict:
    """Return the gluing tables of T4.

    Returns
    -------
    dict with keys
        ``orthants``: list of 15 axis pairs, lexicographic order.
        ``axes``: list of the 10 axis labels.
        ``axis_orthants``: for each axis, the indices of the three
        orthants incident to it.
    """
    return {
        "orthants": [list(e) for e in T4_EDGES],
        "axes": list(range(10)),
        "axis_orthants": [list(t) for t in T4_AXIS_ORTHANTS],
    }


@dataclass(frozen=True)
class TreePoint:
    """A point of T3 or T4 in canonical form.

    Attributes
    ----------
    space : str
        ``"T3"`` or ``"T4"``.
    orthant : int, (int, int) or None
        Branch index 0..2 for T3, sorted axis pair for T4, or ``None``
        for the origin.
    coords : tuple of float
        ``(t,)`` with t > 0 for T3, ``(u, v)`` in ascending axis order
        with u, v >= 0 (not both zero) for T4, and ``()`` for the
        origin.  Boundary points of T4 are stored in the lexicographically
        smallest orthant containing them.
    """

    space: str
    orthant: Optional[OrthantId]
    coords: Tuple[float, ...]

    @property
    def is_origin(self) -> bool:
        return self.orthant is None

    def norm(self) -> float:
        """Distance from the origin."""
        return math.hypot(*self.coords) if self.coords else 0.0

    def to_json_dict(self) -> dict:
        orth = list(self.orthant) if isinstance(self.orthant, tuple) else self.orthant
        return {"space": self.space, "orthant": orth, "coords": list(self.coords)}

    @staticmethod
    def from_json_dict(d: dict) -> "TreePoint":
        orth = d["orthant"]
        if isinstance(orth, list):
            orth = tuple(orth)
        return tree_point(d["space"], orth, d["coords"])


def tree_point(space: str, orthant: Optional[OrthantId],
               coords: Sequence[float]) -> TreePoint:
    """Construct a canonical :class:`TreePoint`, validating its data."""
    if space == T3:
        return _canonical_t3(orthant, coords)
    if space == T4:
        return _canonical_t4(orthant, coords)
    raise ValueError(f"unknown space {space!r}")


def origin(space: str) -> TreePoint:
    if space not in (T3, T4):
        raise ValueError(f"unknown space {space!r}")
    return TreePoint(space, None, ())


def _canonical_t3(orthant, coords) -> TreePoint:
    coords = tuple(float(c) for c in coords)
    if orthant is None:
        if any(c != 0.0 for c in coords):
            raise ValueError("origin must have empty or zero coords")
        return TreePoint(T3, None, ())
    if isinstance(orthant, tuple):
        raise ValueError("T3 orthants are single branch indices")
    orthant = int(orthant)
    if not 0 <= orthant <= 2:
        raise ValueError(f"T3 branch index out of range: {orthant}")
    if len(coords) != 1:
        raise ValueError("T3 points have one coordinate")
    t = coords[0]
    if t < 0 or not math.isfinite(t):
        raise ValueError(f"invalid branch length {t}")
    if t == 0.0:
        return TreePoint(T3, None, ())
    return TreePoint(T3, orthant, (t,))


def _canonical_t4(orthant, coords) -> TreePoint:
    coords = tuple(float(c) for c in coords)
    if orthant is None:
        if any(c != 0.0 for c in coords):
            raise ValueError("origin must have empty or zero coords")
        return TreePoint(T4, None, ())
    if isinstance(orthant, int):
        if not 0 <= orthant < 15:
            raise ValueError(f"T4 orthant index out of range: {orthant}")
        orthant = T4_EDGES[orthant]
    orthant = (int(orthant[0]), int(orthant[1]))
    if orthant[0] > orthant[1]:
        orthant = (orthant[1], orthant[0])
        coords = coords[::-1]
    if orthant not in T4_EDGE_INDEX:
        raise ValueError(f"not a T4 orthant: {orthant}")
    if len(coords) != 2:
        raise ValueError("T4 points have two coordinates")
    u, v = coords
    if u < 0 or v < 0 or not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError(f"invalid coordinates {coords}")
    if u == 0.0 and v == 0.0:
        return TreePoint(T4, None, ())
    if u == 0.0 or v == 0.0:
        # boundary point: normalise to the smallest orthant on its axis
        axis, t = (orthant[0], u) if v == 0.0 else (orthant[1], v)
        home = T4_EDGES[T4_AXIS_ORTHANTS[axis][0]]
        cc = (t, 0.0) if home[0] == axis else (0.0, t)
        return TreePoint(T4, home, cc)
    return TreePoint(T4, orthant, (u, v))


def axis_point(axis: int, t: float) -> TreePoint:
    """The T4 point at distance ``t`` along boundary axis ``axis``."""
    home = T4_EDGES[T4_AXIS_ORTHANTS[axis][0]]
    coords = (t, 0.0) if home[0] == axis else (0.0, t)
    return tree_point(T4, home, coords)


def orthants_containing(p: TreePoint) -> Tuple[int, ...]:
    """Indices of all orthants whose closure contains ``p``."""
    if p.space == T3:
        if p.is_origin:
            return (0, 1, 2)
        return (p.orthant,)
    if p.is_origin:
        return tuple(range(15))
    u, v = p.coords
    if u > 0 and v > 0:
        return (T4_EDGE_INDEX[p.orthant],)
    axis = p.orthant[0] if u > 0 else p.orthant[1]
    return T4_AXIS_ORTHANTS[axis]


def coords_in_orthant(p: TreePoint, orth_idx: int) -> Tuple[float, float]:
    """Coordinates of ``p`` expressed in T4 orthant ``orth_idx``.

    Raises ``ValueError`` if ``p`` does not lie in that orthant's closure.
    """
    if p.space != T4:
        raise ValueError("coords_in_orthant applies to T4 points")
    edge = T4_EDGES[orth_idx]
    if p.is_origin:
        return (0.0, 0.0)
    u, v = p.coords
    if p.orthant == edge:
        return (u, v)
    if u == 0.0 or v == 0.0:
        axis, t = (p.orthant[0], u) if v == 0.0 else (p.orthant[1], v)
        if axis == edge[0]:
            return (t, 0.0)
        if axis == edge[1]:
            return (0.0, t)
    raise ValueError(f"{p} does not lie in orthant {edge}")


# ---------------------------------------------------------------------------
# Unfolding tables for T4 geodesics.
#
# A candidate geodesic crosses orthants A_0, ..., A_{L-1} (L <= 4) where
# consecutive orthants share a boundary axis and consecutive crossing
# axes are distinct.  Unfolding the sequence isometrically into the
# plane places the crossing axis s_m along the ray at angle 90*m degrees
# and orthant A_m in the sector [90m, 90(m+1)].
# ---------------------------------------------------------------------------

# exact unit vectors at angles 90*m degrees
_U = [np.array(v, dtype=float) for v in ((1, 0), (0, 1), (-1, 0), (0, -1), (1, 0))]


@dataclass(frozen=True)
class _Candidate:
    seq: Tuple[int, ...]          # orthant indices along the path
    cross_axes: Tuple[int, ...]   # axes crossed between consecutive orthants
    p_swap: bool                  # True if p's coords are (shared, other)
    q_cols: Tuple[Tuple[float, float], Tuple[float, float]]
    # columns embedding q's (coord on lower axis, coord on upper axis)


def _shared_axis(i: int, j: int) -> Optional[int]:
    a, b = T4_EDGES[i], T4_EDGES[j]
    common = set(a) & set(b)
    return common.pop() if len(common) == 1 else None


_ADJACENT: List[List[Tuple[int, int]]] = [[] for _ in range(15)]
for _i in range(15):
    for _j in range(15):
        if _i != _j:
            _s = _shared_axis(_i, _j)
            if _s is not None:
                _ADJACENT[_i].append((_j, _s))


def _build_candidates() -> dict:
    """Enumerate unfolding candidates for every ordered orthant pair."""
    table: dict = {}
    for a in range(15):
        paths = [((a,), ())]
        for _ in range(3):
            new = []
            for seq, axes in paths:
                for j, s in _ADJACENT[seq[-1]]:
                    if axes and s == axes[-1]:
                        continue  # must cross a different axis each time
                    if j in seq:
                        continue  # orthant sequences are simple
                    new.append((seq + (j,), axes + (s,)))
            paths.extend(new)
        for seq, axes in paths:
            if len(seq) < 2:
                continue
            b = seq[-1]
            k = len(axes)
            ea, eb = T4_EDGES[a], T4_EDGES[b]
            p_swap = axes[0] == ea[0]   # coords[0] is the shared axis
            # q's embedded position: shared coord along u(90k),
            # other coord along u(90(k+1)).
            q_shared_is_low = axes[-1] == eb[0]
            u_sh, u_ot = _U[k % 4], _U[(k + 1) % 4]
            if q_shared_is_low:
                cols = (tuple(u_sh), tuple(u_ot))
            else:
                cols = (tuple(u_ot), tuple(u_sh))
            table.setdefault((a, b), []).append(
                _Candidate(seq, axes, p_swap, cols))
    return table


_CANDIDATES = _build_candidates()


@dataclass(frozen=True)
class Geodesic:
    """The unique geodesic between two points.

    Attributes
    ----------
    p, q : TreePoint
        Endpoints.
    length : float
        Geodesic distance.
    kind : str
        ``"SameOrthant"``, ``"Unfolded"`` or ``"ConePath"``.
    breakpoints : tuple of TreePoint
        Axis crossings (for unfolded paths) or the origin (for cone
        paths), in order from ``p`` to ``q``.
    fractions : tuple of float
        Arc-length fraction along the geodesic of each breakpoint.
    """

    p: TreePoint
    q: TreePoint
    length: float
    kind: str
    breakpoints: Tuple[TreePoint, ...]
    fractions: Tuple[float, ...]
    _emb: Optional[Tuple] = None   # internal: planar embedding data


def _unfold_candidate(cand: _Candidate, pu: float, pv: float,
                      qu: float, qv: float):
    """Try one unfolding; return (length, emb_p, emb_q, ts, rs) or None."""
    if cand.p_swap:
        pe = np.array([pv, pu])
    else:
        pe = np.array([pu, pv])
    c0, c1 = cand.q_cols
    qe = np.array([qu * c0[0] + qv * c1[0], qu * c0[1] + qv * c1[1]])
    ts = []
    rs = []
    for m in range(1, len(cand.seq)):
        u = _U[m % 4]
        sp = u[0] * pe[1] - u[1] * pe[0]   # signed angle side of p
        sq = u[0] * qe[1] - u[1] * qe[0]
        if sp > 1e-12 or sq < -1e-12:
            return None
        den = sp - sq
        if den >= -1e-300:          # both on the ray: degenerate (cone)
            return None
        t = sp / den
        x = pe + t * (qe - pe)
        r = u[0] * x[0] + u[1] * x[1]
        if r < -1e-12:
            return None
        ts.append(float(min(max(t, 0.0), 1.0)))
        rs.append(float(max(r, 0.0)))
    length = float(np.hypot(qe[0] - pe[0], qe[1] - pe[1]))
    return length, pe, qe, ts, rs


def geodesic(p: TreePoint, q: TreePoint) -> Geodesic:
    """Compute the geodesic between two points of the same space."""
    if p.space != q.space:
        raise ValueError("points lie in different spaces")
    if p.space == T3:
        return _geodesic_t3(p, q)
    return _geodesic_t4(p, q)


def _geodesic_t3(p: TreePoint, q: TreePoint) -> Geodesic:
    if not p.is_origin and not q.is_origin and p.orthant != q.orthant:
        length = p.coords[0] + q.coords[0]
        return Geodesic(p, q, length, "ConePath", (origin(T3),),
                        (p.coords[0] / length,))
    # same branch, or one endpoint at the origin
    length = abs(p.norm() - q.norm()) if p.orthant == q.orthant else p.norm() + q.norm()
    return Geodesic(p, q, length, "SameOrthant", (), ())


def _geodesic_t4(p: TreePoint, q: TreePoint) -> Geodesic:
    cone_len = p.norm() + q.norm()
    if p.is_origin or q.is_origin:
        return Geodesic(p, q, cone_len, "SameOrthant", (), ())
    common = set(orthants_containing(p)) & set(orthants_containing(q))
    if common:
        o = min(common)
        pu, pv = coords_in_orthant(p, o)
        qu, qv = coords_in_orthant(q, o)
        length = math.hypot(qu - pu, qv - pv)
        return Geodesic(p, q, length, "SameOrthant", (), (),
                        _emb=("same", o, (pu, pv), (qu, qv)))
    a = T4_EDGE_INDEX[p.orthant]
    b = T4_EDGE_INDEX[q.orthant]
    pu, pv = p.coords
    qu, qv = q.coords
    best = None
    for cand in _CANDIDATES.get((a, b), ()):
        res = _unfold_candidate(cand, pu, pv, qu, qv)
        if res is None:
            continue
        if best is None or res[0] < best[1][0]:
            best = (cand, res)
    if best is not None and best[1][0] < cone_len - 1e-12:
        cand, (length, pe, qe, ts, rs) = best
        bps = tuple(axis_point(s, r) for s, r in zip(cand.cross_axes, rs))
        return Geodesic(p, q, length, "Unfolded", bps, tuple(ts),
                        _emb=("unfold", cand, pe, qe, ts))
    frac = p.norm() / cone_len
    return Geodesic(p, q, cone_len, "ConePath", (origin(T4),), (frac,))


def distance(p: TreePoint, q: TreePoint) -> float:
    """Geodesic distance between two points of the same space."""
    if p.space != q.space:
        raise ValueError("points lie in different spaces")
    if p.space == T3:
        if p.is_origin or q.is_origin:
            return p.norm() + q.norm()
        if p.orthant == q.orthant:
            return abs(p.coords[0] - q.coords[0])
        return p.coords[0] + q.coords[0]
    return _distance_t4(p, q)


def _distance_t4(p: TreePoint, q: TreePoint) -> float:
    cone_len = p.norm() + q.norm()
    if p.is_origin or q.is_origin:
        return cone_len
    common = set(orthants_containing(p)) & set(orthants_containing(q))
    if common:
        o = min(common)
        pu, pv = coords_in_orthant(p, o)
        qu, qv = coords_in_orthant(q, o)
        return math.hypot(qu - pu, qv - pv)
    a = T4_EDGE_INDEX[p.orthant]
    b = T4_EDGE_INDEX[q.orthant]
    best = cone_len
    pu, pv = p.coords
    qu, qv = q.coords
    for cand in _CANDIDATES.get((a, b), ()):
        res = _unfold_candidate(cand, pu, pv, qu, qv)
        if res is not None and res[0] < best:
            best = res[0]
    return best


def point_on_geodesic(p: TreePoint, q: TreePoint, lam: float) -> TreePoint:
    """The point at arc-length fraction ``lam`` in [0, 1] from p to q."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {lam}")
    g = geodesic(p, q)
    return geodesic_eval(g, lam)


def geodesic_eval(g: Geodesic, lam: float) -> TreePoint:
    """Evaluate a previously computed geodesic at fraction ``lam``."""
    p, q = g.p, g.q
    if g.length == 0.0:
        return p
    if p.space == T3:
        if g.kind == "ConePath":
            dp = p.coords[0]
            s = lam * g.length
            if s <= dp:
                return tree_point(T3, p.orthant, (dp - s,))
            return tree_point(T3, q.orthant, (s - dp,))
        # same orthant (possibly via the origin endpoint)
        if p.is_origin:
            return tree_point(T3, q.orthant, (lam * q.coords[0],))
        if q.is_origin:
            return tree_point(T3, p.orthant, ((1 - lam) * p.coords[0],))
        t = (1 - lam) * p.coords[0] + lam * q.coords[0]
        return tree_point(T3, p.orthant, (t,))
    # T4
    if g.kind == "ConePath" or (g._emb is None and g.kind == "SameOrthant"
                                and (p.is_origin or q.is_origin)):
        dp = p.norm()
        s = lam * g.length
        if s <= dp:
            f = 0.0 if dp == 0.0 else (dp - s) / dp
            return tree_point(T4, p.orthant, tuple(f * c for c in p.coords)) \
                if not p.is_origin else origin(T4)
        dq = q.norm()
        f = 0.0 if dq == 0.0 else (s - dp) / dq
        return tree_point(T4, q.orthant, tuple(f * c for c in q.coords)) \
            if not q.is_origin else origin(T4)
    kind, *data = g._emb
    if kind == "same":
        o, (pu, pv), (qu, qv) = data
        u = (1 - lam) * pu + lam * qu
        v = (1 - lam) * pv + lam * qv
        return tree_point(T4, T4_EDGES[o], (max(u, 0.0), max(v, 0.0)))
    cand, pe, qe, ts = data
    x = pe + lam * (qe - pe)
    m = sum(1 for t in ts if t <= lam)   # sector index
    u_lo, u_hi = _U[m % 4], _U[(m + 1) % 4]
    c_lo = max(float(u_lo[0] * x[0] + u_lo[1] * x[1]), 0.0)
    c_hi = max(float(u_hi[0] * x[0] + u_hi[1] * x[1]), 0.0)
    orth = T4_EDGES[cand.seq[m]]
    if m == 0:
        # sector 0: angle-0 ray is p's non-shared axis, angle-90 is axes[0]
        lo_axis = orth[1] if cand.p_swap else orth[0]
    else:
        lo_axis = cand.cross_axes[m - 1]
    if lo_axis == orth[0]:
        coords = (c_lo, c_hi)
    else:
        coords = (c_hi, c_lo)
    return tree_point(T4, orth, coords)


def origin_crossing_fraction(p: TreePoint, q: TreePoint) -> Optional[float]:
    """Arc-length fraction at which the p-q geodesic meets the origin.

    Returns ``None`` when the geodesic does not pass through the origin.
    """
    g = geodesic(p, q)
    if g.kind == "ConePath":
        return g.fractions[0]
    if p.is_origin:
        return 0.0
    if q.is_origin:
        return 1.0
    return None


def log_map(p: TreePoint, q: TreePoint) -> Tuple[float, ...]:
    """Coordinates of ``q`` unfolded into ``p``'s orthant chart.

    ``p`` must be interior to an orthant.  The returned tuple ``qt``
    satisfies ``|qt - p| == distance(p, q)`` in the chart, and the
    geodesic leaves ``p`` as the straight segment ``p + t * (qt - p)``
    for small ``t``.  Components may be negative when the geodesic
    crosses an axis or the origin.
    """
    if p.space != q.space:
        raise ValueError("points lie in different spaces")
    if p.space == T3:
        if p.is_origin:
            raise ValueError("log map needs an interior base point")
        if q.is_origin:
            return (0.0,)
        if q.orthant == p.orthant:
            return (q.coords[0],)
        return (-q.coords[0],)
    if p.is_origin or min(p.coords) <= 0.0:
        raise ValueError("log map needs an interior base point")
    g = _geodesic_t4(p, q)
    if g.kind == "ConePath":
        f = -q.norm() / p.norm()
        return (f * p.coords[0], f * p.coords[1])
    if g.kind == "SameOrthant":
        if g._emb is None:          # q at the origin
            return (0.0, 0.0)
        return tuple(g._emb[3])
    cand, pe, qe, _ = g._emb[1:]
    if cand.p_swap:
        return (float(qe[1]), float(qe[0]))
    return (float(qe[0]), float(qe[1]))


# ---------------------------------------------------------------------------
# Batched geodesic structure
# ---------------------------------------------------------------------------

_EDGE_ARR = np.array(T4_EDGES, dtype=np.int64)
_AXIS_IN_ORTH = np.zeros((10, 15), dtype=bool)
for _s in range(10):
    for _o in range(15):
        _AXIS_IN_ORTH[_s, _o] = _s in T4_EDGES[_o]
_AXES_COORTHANT = np.zeros((10, 10), dtype=bool)
for _e in T4_EDGES:
    _AXES_COORTHANT[_e[0], _e[1]] = True
    _AXES_COORTHANT[_e[1], _e[0]] = True

@dataclass
class GeodesicTable:
    """Crossing structure of many T4 geodesics, in flat arrays.

    For pair row r, ``kind[r]`` is 0 (same orthant), 1 (unfolded) or 2
    (cone path).  Unfolded crossings are rows of the ``cross_*`` arrays:
    ``cross_pair`` points back to the pair row, ``cross_axis`` is the
    axis crossed, ``cross_t`` the position along it, and ``cross_frac``
    the arc-length fraction.  ``cone_frac`` holds the origin fraction
    for cone rows (NaN elsewhere).
    """

    kind: np.ndarray
    length: np.ndarray
    cone_frac: np.ndarray
    cross_pair: np.ndarray
    cross_axis: np.ndarray
    cross_t: np.ndarray
    cross_frac: np.ndarray


def batch_geodesics(ia, ua, va, ib, ub, vb) -> GeodesicTable:
    """Geodesic kinds and crossings for elementwise pairs of T4 points.

    Inputs are packed point arrays (orthant index, canonical coords);
    index -1 denotes the origin.  Row r pairs point (ia[r], ua[r],
    va[r]) with (ib[r], ub[r], vb[r]).
    """
    ia = np.asarray(ia)
    n = len(ia)
    norm_a = np.hypot(ua, va)
    norm_b = np.hypot(ub, vb)
    kind = np.full(n, 2, dtype=np.int8)
    length = norm_a + norm_b
    tot = np.where(length > 0, length, 1.0)
    cone_frac = norm_a / tot
    cp, cx, ct, cf = [], [], [], []

    simple = (ia == ib) | (ia < 0) | (ib < 0)
    kind[simple] = 0
    both = (ia >= 0) & (ib >= 0)
    eq = (ia == ib) & both
    length[eq] = np.hypot(ua[eq] - ub[eq], va[eq] - vb[eq])

    # boundary points may share an orthant even when their canonical
    # orthant indices differ: one lies on an axis of the other's
    # orthant, or each lies on an axis and both axes bound one orthant
    rest = ~simple
    ia_s = np.where(both, ia, 0)
    ib_s = np.where(both, ib, 0)
    axis_a = np.where(va == 0.0, _EDGE_ARR[ia_s, 0],
                      np.where(ua == 0.0, _EDGE_ARR[ia_s, 1], -1))
    axis_b = np.where(vb == 0.0, _EDGE_ARR[ib_s, 0],
                      np.where(ub == 0.0, _EDGE_ARR[ib_s, 1], -1))
    on_a = rest & (axis_a >= 0)
    on_b = rest & (axis_b >= 0)
    case1 = on_a & _AXIS_IN_ORTH[np.where(on_a, axis_a, 0), ib_s]
    case2 = on_b & _AXIS_IN_ORTH[np.where(on_b, axis_b, 0), ia_s] & ~case1
    case3 = on_a & on_b & ~case1 & ~case2 & \
        _AXES_COORTHANT[np.where(on_a, axis_a, 0), np.where(on_b, axis_b, 0)]
    if case1.any():
        lo = axis_a == _EDGE_ARR[ib_s, 0]
        eu = np.where(lo, norm_a, 0.0)
        ev = np.where(lo, 0.0, norm_a)
        d1 = np.hypot(eu - ub, ev - vb)
        length[case1] = d1[case1]
    if case2.any():
        lo = axis_b == _EDGE_ARR[ia_s, 0]
        eu = np.where(lo, norm_b, 0.0)
        ev = np.where(lo, 0.0, norm_b)
        d2 = np.hypot(eu - ua, ev - va)
        length[case2] = d2[case2]
    if case3.any():
        d3 = np.hypot(norm_a, norm_b)
        length[case3] = d3[case3]
    shared = case1 | case2 | case3
    kind[shared] = 0
    rest = rest & ~shared

    rows = np.nonzero(rest)[0]
    if len(rows):
        group_key = ia[rows] * 15 + ib[rows]
        order = np.argsort(group_key, kind="stable")
        rows = rows[order]
        group_key = group_key[order]
        starts = np.nonzero(np.r_[True, np.diff(group_key) > 0])[0]
        for g, s in enumerate(starts):
            e = starts[g + 1] if g + 1 < len(starts) else len(rows)
            rr = rows[s:e]
            a, b = int(ia[rr[0]]), int(ib[rr[0]])
            _batch_unfold_group(a, b, ua[rr], va[rr], ub[rr], vb[rr], rr,
                                kind, length, cp, cx, ct, cf)
    return GeodesicTable(
        kind, length, cone_frac,
        np.array(cp, dtype=np.int64), np.array(cx, dtype=np.int64),
        np.array(ct, dtype=np.float64), np.array(cf, dtype=np.float64))


def _batch_unfold_group(a, b, pu, pv, qu, qv, rows, kind, length,
                        cp, cx, ct, cf):
    """Vectorised unfolding for one (orthant, orthant) pair group."""
    m = len(rows)
    best_len = length[rows].copy()          # cone length
    best_cand = np.full(m, -1, dtype=np.int64)
    cands = _CANDIDATES.get((a, b), ())
    store = []
    for ci, cand in enumerate(cands):
        pe0, pe1 = (pv, pu) if cand.p_swap else (pu, pv)
        c0, c1 = cand.q_cols
        qe0 = qu * c0[0] + qv * c1[0]
        qe1 = qu * c0[1] + qv * c1[1]
        valid = np.ones(m, dtype=bool)
        k = len(cand.cross_axes)
        tlist = np.zeros((k, m))
        rlist = np.zeros((k, m))
        for j in range(k):
            u = _U[(j + 1) % 4]
            sp = u[0] * pe1 - u[1] * pe0
            sq = u[0] * qe1 - u[1] * qe0
            den = sp - sq
            ok = (sp <= 1e-12) & (sq >= -1e-12) & (den < -1e-300)
            dsafe = np.where(ok, den, -1.0)
            t = sp / dsafe
            r = u[0] * (pe0 + t * (qe0 - pe0)) + u[1] * (pe1 + t * (qe1 - pe1))
            valid &= ok & (r >= -1e-12)
            tlist[j] = np.clip(t, 0.0, 1.0)
            rlist[j] = np.maximum(r, 0.0)
        seg = np.hypot(qe0 - pe0, qe1 - pe1)
        better = valid & (seg < best_len - 1e-12)
        best_len[better] = seg[better]
        best_cand[better] = ci
        store.append((tlist, rlist))
    won = best_cand >= 0
    kind[rows[won]] = 1
    length[rows] = best_len
    for i in np.nonzero(won)[0]:
        ci = best_cand[i]
        cand = cands[ci]
        tlist, rlist = store[ci]
        for j, axis in enumerate(cand.cross_axes):
            cp.append(rows[i])
            cx.append(axis)
            ct.append(rlist[j, i])
            cf.append(tlist[j, i])


# ---------------------------------------------------------------------------
# JSON serialisation
# ---------------------------------------------------------------------------

def points_to_jsonl(points: Iterable[TreePoint]) -> str:
    return "\n".join(json.dumps(p.to_json_dict()) for p in points) + "\n"


def parse_point_line(line: str) -> TreePoint:
    return TreePoint.from_json_dict(json.loads(line))


def read_points_jsonl(path: str) -> List[TreePoint]:
    """Read points from a JSONL file, skipping non-point header records."""
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "space" not in d:
                continue
            pts.append(TreePoint.from_json_dict(d))
    return pts


def write_points_jsonl(path: str, points: Iterable[TreePoint],
                       header: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for p in points:
            fh.write(json.dumps(p.to_json_dict()) + "\n")
