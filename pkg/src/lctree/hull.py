"""Least concave majorants of point values on T3 and T4.

Given labelled points (X_i, y_i), the estimators in :mod:`lctree.mle`
need the least concave function h with h(X_i) >= y_i, where concavity
is along geodesics.

On T3 the hypograph hull decomposes exactly: the value at the origin is
a maximum of chord values over cross-branch pairs, after which each
branch reduces to a Euclidean 2D upper hull.  A "bent" variant relaxes
concavity at the origin (kinks pointing down are allowed up to a factor
two in the one-sided slopes), which only changes the origin value.

On T4 the hull is approximated by the skeleton iteration: origin values
are bounded by linear programs over the 60 planar unfoldings of three
sequentially glued quadrants (plus chords of cone-path geodesics),
boundary crossings of pairwise geodesics are accumulated on the ten
axis planes, non-vertices are pruned plane by plane, and per-quadrant
3D convex hulls are rebuilt.  Every constructed vertex carries the
convex coefficients of the original samples that generated it, which
later yields exact subgradients of the integral term of the likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import treespace as ts
from . import _kernels as kn

LOGCONCAVE = "logconcave"
BENT = "bent"


# ---------------------------------------------------------------------------
# 1D (T3)
# ---------------------------------------------------------------------------

def _split_branches(points: Sequence[ts.TreePoint], values) -> Tuple[dict, list]:
    """Group T3 points by branch; return ({branch: [(t, y, i)]}, origin rows)."""
    branches: Dict[int, list] = {}
    origin_rows = []
    for i, (p, y) in enumerate(zip(points, values)):
        if p.space != ts.T3:
            raise ValueError("1D hull expects T3 points")
        if p.is_origin:
            origin_rows.append((float(y), i))
        else:
            branches.setdefault(p.orthant, []).append(
                (p.coords[0], float(y), i))
    return branches, origin_rows


def _upper_chain(rows):
    """Upper concave chain of (pos, val, payload) rows.

    Duplicate positions keep the larger value.  Returns the chain as a
    list of rows (vertices, ascending position).
    """
    rows = sorted(rows, key=lambda r: (r[0], -r[1]))
    dedup = []
    for r in rows:
        if dedup and r[0] == dedup[-1][0]:
            continue
        dedup.append(r)
    chain = []
    for r in dedup:
        while len(chain) >= 2:
            (x1, y1), (x2, y2) = chain[-2][:2], chain[-1][:2]
            x3, y3 = r[0], r[1]
            if (x3 - x1) * (y2 - y1) - (x2 - x1) * (y3 - y1) <= 0.0:
                chain.pop()
            else:
                break
        chain.append(r)
    return chain


def _pair_chord_max(da, ya, db, yb, mode: str):
    """Best origin chord over all cross pairs of two vertex arrays.

    Returns (value, (ia, ib)) of the best pair, where distances are
    measured from the origin along the two branches.
    """
    da = da[:, None]
    ya = ya[:, None]
    db = db[None, :]
    yb = yb[None, :]
    if mode == LOGCONCAVE:
        vals = (db * ya + da * yb) / (da + db)
    else:
        v1 = (da * yb + 2.0 * db * ya) / (da + 2.0 * db)
        v2 = (2.0 * da * yb + db * ya) / (2.0 * da + db)
        vals = np.minimum(v1, v2)
    flat = np.argmax(vals)
    i, j = np.unravel_index(flat, vals.shape)
    return float(vals[i, j]), (int(i), int(j))


def _origin_chord_lam(da, ya, db, yb, mode):
    """Convex coefficients (on the two endpoints) of the winning chord."""
    if mode == LOGCONCAVE:
        return db / (da + db), da / (da + db)
    v1 = (da * yb + 2.0 * db * ya) / (da + 2.0 * db)
    v2 = (2.0 * da * yb + db * ya) / (2.0 * da + db)
    if v1 <= v2:
        return 2.0 * db / (da + 2.0 * db), da / (da + 2.0 * db)
    return db / (2.0 * da + db), 2.0 * da / (2.0 * da + db)


def _origin_value_with_lam(points, values, mode):
    branches, origin_rows = _split_branches(points, values)
    occupied = sorted(branches)
    if len(occupied) < 2 and not origin_rows:
        raise ValueError("origin value needs points spanning >= 2 orthants")
    best = -math.inf
    best_lam: Optional[dict] = None
    for y, i in origin_rows:
        if y > best:
            best, best_lam = y, {i: 1.0}
    verts = {b: _upper_chain(branches[b]) for b in occupied}
    for ai in range(len(occupied)):
        for bi in range(ai + 1, len(occupied)):
            va = verts[occupied[ai]]
            vb = verts[occupied[bi]]
            da = np.array([r[0] for r in va])
            ya = np.array([r[1] for r in va])
            db = np.array([r[0] for r in vb])
            yb = np.array([r[1] for r in vb])
            val, (i, j) = _pair_chord_max(da, ya, db, yb, mode)
            if val > best:
                la, lb = _origin_chord_lam(da[i], ya[i], db[j], yb[j], mode)
                best = val
                best_lam = {va[i][2]: la, vb[j][2]: lb}
    return best, best_lam


def origin_value_1d(points: Sequence[ts.TreePoint], values: Sequence[float],
                    mode: str = LOGCONCAVE) -> float:
    """Value at the origin of the least majorant's hypograph hull.

    In log-concave mode this is the maximum over cross-branch pairs of
    the chord value at the origin crossing; in bent mode each chord is
    replaced by the smaller of the two slope-doubled chords.

    Raises ``ValueError`` when all points lie on a single branch and
    none sits at the origin (no origin constraint arises).
    """
    if mode not in (LOGCONCAVE, BENT):
        raise ValueError(f"unknown mode {mode!r}")
    val, _ = _origin_value_with_lam(points, values, mode)
    return val


@dataclass
class Branch1D:
    pos: np.ndarray
    val: np.ndarray
    lams: List[dict]


@dataclass
class ConcavePWL1D:
    """Piecewise-linear concave majorant on T3.

    ``branches[b]`` holds the hull vertices of branch ``b`` in ascending
    position; when the hull passes through the origin the first vertex
    of every occupied branch sits at position 0 with ``origin_value``.
    Outside the per-branch domains the function is minus infinity.
    """

    mode: str
    through_origin: bool
    origin_value: Optional[float]
    origin_lam: Optional[dict]
    branches: Dict[int, Branch1D]

    @property
    def space(self) -> str:
        return ts.T3

    def domain(self, branch: int) -> Optional[Tuple[float, float]]:
        br = self.branches.get(branch)
        if br is None:
            return None
        return float(br.pos[0]), float(br.pos[-1])

    def to_json_dict(self) -> dict:
        return {
            "space": ts.T3,
            "mode": self.mode,
            "throughOrigin": self.through_origin,
            "originValue": self.origin_value,
            "branches": {
                str(b): {"pos": br.pos.tolist(), "val": br.val.tolist()}
                for b, br in self.branches.items()
            },
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ConcavePWL1D":
        branches = {
            int(b): Branch1D(np.asarray(v["pos"], float),
                             np.asarray(v["val"], float),
                             [{} for _ in v["pos"]])
            for b, v in d["branches"].items()
        }
        return ConcavePWL1D(d["mode"], d["throughOrigin"], d["originValue"],
                            None, branches)


def concave_hull_1d(points: Sequence[ts.TreePoint], values: Sequence[float],
                    mode: str = LOGCONCAVE) -> ConcavePWL1D:
    """Least concave (or bent-concave) majorant of values on T3.

    Per branch this is the upper chain of the 2D hull of that branch's
    points together with the origin point (0, y0) whenever points span
    more than one branch or sit at the origin.
    """
    if mode not in (LOGCONCAVE, BENT):
        raise ValueError(f"unknown mode {mode!r}")
    if len(points) == 0:
        raise ValueError("need at least one point")
    branches, origin_rows = _split_branches(points, values)
    through = len(branches) >= 2 or bool(origin_rows)
    origin_value = None
    origin_lam = None
    out: Dict[int, Branch1D] = {}
    if through:
        origin_value, origin_lam = _origin_value_with_lam(points, values, mode)
    for b, rows in branches.items():
        pts = [(t, y, {i: 1.0}) for t, y, i in rows]
        if through:
            pts.append((0.0, origin_value, dict(origin_lam)))
        chain = _upper_chain(pts)
        out[b] = Branch1D(np.array([r[0] for r in chain]),
                          np.array([r[1] for r in chain]),
                          [r[2] for r in chain])
    return ConcavePWL1D(mode, through, origin_value, origin_lam, out)


def evaluate_1d(hull: ConcavePWL1D, x: ts.TreePoint) -> float:
    """Value of the 1D majorant at a point (-inf outside its domain)."""
    if x.is_origin:
        if hull.through_origin:
            return float(hull.origin_value)
        for br in hull.branches.values():
            if br.pos[0] == 0.0:
                return float(br.val[0])
        return -math.inf
    br = hull.branches.get(x.orthant)
    if br is None:
        return -math.inf
    t = x.coords[0]
    if t < br.pos[0] or t > br.pos[-1]:
        return -math.inf
    return float(np.interp(t, br.pos, br.val))


def evaluate_1d_packed(hull: ConcavePWL1D, idx: np.ndarray,
                       u: np.ndarray) -> np.ndarray:
    """Vectorised :func:`evaluate_1d` over packed T3 point arrays."""
    out = np.full(len(idx), -np.inf)
    for b, br in hull.branches.items():
        mask = idx == b
        if mask.any():
            t = u[mask]
            vals = np.interp(t, br.pos, br.val)
            vals[(t < br.pos[0]) | (t > br.pos[-1])] = -np.inf
            out[mask] = vals
    orig = idx < 0
    if orig.any():
        out[orig] = hull.origin_value if hull.through_origin else -np.inf
    return out


# ---------------------------------------------------------------------------
# 2D (T4) skeleton
# ---------------------------------------------------------------------------

@dataclass
class _Pt:
    """A working point of the skeleton with its sample provenance."""

    orth: int                     # canonical orthant index; -1 for origin
    u: float
    v: float
    y: float
    lam: dict                     # sample index -> convex coefficient
    axis: Optional[int] = None    # axis id when the point lies on an axis
    t: float = 0.0                # position along that axis

    def coords_in(self, orth_idx: int) -> Tuple[float, float]:
        if self.orth == orth_idx:
            return self.u, self.v
        if self.orth < 0:
            return 0.0, 0.0
        edge = ts.T4_EDGES[orth_idx]
        if self.axis == edge[0]:
            return self.t, 0.0
        if self.axis == edge[1]:
            return 0.0, self.t
        raise ValueError("point not in orthant closure")

    def orthants(self) -> Tuple[int, ...]:
        if self.orth < 0:
            return tuple(range(15))
        if self.axis is not None:
            return ts.T4_AXIS_ORTHANTS[self.axis]
        return (self.orth,)


def _merge_lam(lam_a: dict, lam_b: dict, fa: float, fb: float) -> dict:
    out = {}
    for k, c in lam_a.items():
        out[k] = out.get(k, 0.0) + fa * c
    for k, c in lam_b.items():
        out[k] = out.get(k, 0.0) + fb * c
    return out


def _axis_home(axis: int, tpos: float) -> Tuple[int, float, float]:
    """Canonical orthant and coordinates of a point on an axis."""
    home = ts.T4_AXIS_ORTHANTS[axis][0]
    if ts.T4_EDGES[home][0] == axis:
        return home, tpos, 0.0
    return home, 0.0, tpos


# the 60 sequentially connected quadrant triples (mid, (nbr0, axis0),
# (nbr1, axis1)) with the two neighbours attached along different axes
def _build_triples():
    triples = []
    for mid in range(15):
        a0, a1 = ts.T4_EDGES[mid]
        for n0 in ts.T4_AXIS_ORTHANTS[a0]:
            if n0 == mid:
                continue
            for n1 in ts.T4_AXIS_ORTHANTS[a1]:
                if n1 == mid:
                    continue
                triples.append((mid, (n0, a0), (n1, a1)))
    return triples


_TRIPLES = _build_triples()


def _envelopes_at_plane_origin(x: np.ndarray, y: np.ndarray):
    """Extreme convex-combination values at the plane origin.

    Given planar positions ``x`` (m, 2) with values ``y`` (m,), returns
    ``[(value, mu, sense), ...]`` where ``value`` is the upper (sense
    ``+1``) or lower (sense ``-1``) envelope of the lifted points
    evaluated at ``(0, 0)`` and ``mu`` is a list of ``(member, weight)``
    pairs describing the attaining convex combination.  Returns ``None``
    when the configuration is too degenerate for the direct route; the
    caller then falls back to the generic LP.
    """
    m = len(y)
    if m <= 3:
        # exact enumeration over singleton, pair and triple supports
        best: dict = {}
        for k in range(m):
            if abs(x[k, 0]) < 1e-12 and abs(x[k, 1]) < 1e-12:
                _env_note(best, float(y[k]), [(k, 1.0)])
        for a in range(m):
            for b in range(a + 1, m):
                d = x[b] - x[a]
                nd = float(np.hypot(d[0], d[1]))
                if nd < 1e-12:
                    continue
                t = float(-(x[a] @ d) / (d @ d))
                if -1e-9 <= t <= 1.0 + 1e-9 and \
                        float(np.hypot(*(x[a] + t * d))) < 1e-9 * (1.0 + nd):
                    t = min(max(t, 0.0), 1.0)
                    _env_note(best, float((1 - t) * y[a] + t * y[b]),
                              [(a, 1.0 - t), (b, t)])
        if m == 3:
            mat = np.vstack([x.T, np.ones(3)])
            try:
                mu = np.linalg.solve(mat, np.array([0.0, 0.0, 1.0]))
            except np.linalg.LinAlgError:
                mu = None
            if mu is not None and (mu > -1e-9).all():
                mu = np.clip(mu, 0.0, None)
                mu /= mu.sum()
                _env_note(best, float(mu @ y), list(enumerate(map(float, mu))))
        if not best:
            return []
        out = []
        if "hi" in best:
            out.append((best["hi"][0], best["hi"][1], 1))
        if "lo" in best:
            out.append((best["lo"][0], best["lo"][1], -1))
        return out

    pts3 = np.column_stack([x, y])
    ch = None
    for opts in ("Qt", "Qt QJ"):
        try:
            ch = ConvexHull(pts3, qhull_options=opts)
            break
        except (QhullError, ValueError):
            continue
    if ch is None:
        return None
    eqs = ch.equations
    nz = eqs[:, 2]
    out = []
    for sense, mask in ((1, nz > 1e-12), (-1, nz < -1e-12)):
        if not mask.any():
            return None
        vals = -eqs[mask, 3] / nz[mask]
        rows = np.flatnonzero(mask)
        # a concave roof is the min of its facet planes (max for the
        # convex floor), so the extreme plane value at the origin is the
        # envelope value there and its facet contains the origin
        pick = int(np.argmin(vals)) if sense > 0 else int(np.argmax(vals))
        tri = ch.simplices[rows[pick]]
        mat = np.vstack([x[tri].T, np.ones(3)])
        try:
            mu = np.linalg.solve(mat, np.array([0.0, 0.0, 1.0]))
        except np.linalg.LinAlgError:
            return None
        if not (mu > -1e-7).all():
            return None
        mu = np.clip(mu, 0.0, None)
        s = mu.sum()
        if not np.isfinite(s) or s <= 0:
            return None
        mu /= s
        out.append((float(vals[pick]),
                    [(int(k), float(w)) for k, w in zip(tri, mu) if w > 1e-12],
                    sense))
    return out


def _env_note(best: dict, val: float, mu):
    if "hi" not in best or val > best["hi"][0]:
        best["hi"] = (val, mu)
    if "lo" not in best or val < best["lo"][0]:
        best["lo"] = (val, mu)


def origin_lp_candidates(pts: List[_Pt]):
    """Origin values from the 60 three-quadrant unfolding LPs.

    Each triple of sequentially glued quadrants unfolds isometrically
    into three plane sectors; convex combinations of the embedded
    points that land on the image of the origin bound the hull values
    there.  Yields (value, lam, sense) with sense +1 for maximisation
    results and -1 for minimisation results.
    """
    for mid, (n0, a0), (n1, a1) in _TRIPLES:
        members = []
        emb = []
        for p in pts:
            orths = p.orthants()
            if p.orth < 0:
                members.append(p)
                emb.append((0.0, 0.0))
            elif n0 in orths and p.axis != a0:
                # frame of the first quadrant: its free axis at angle 0,
                # the shared axis a0 at angle 90
                e = ts.T4_EDGES[n0]
                u, v = p.coords_in(n0)
                other, shr = (v, u) if e[0] == a0 else (u, v)
                members.append(p)
                emb.append((other, shr))
            elif mid in orths or p.axis == a0:
                # middle quadrant: a0 at angle 90, a1 at angle 180
                u, v = p.coords_in(mid)
                c0, c1 = (u, v) if ts.T4_EDGES[mid][0] == a0 else (v, u)
                members.append(p)
                emb.append((-c1, c0))
            elif n1 in orths:
                # last quadrant: a1 at angle 180, its free axis at 270
                e = ts.T4_EDGES[n1]
                u, v = p.coords_in(n1)
                shr, other = (u, v) if e[0] == a1 else (v, u)
                members.append(p)
                emb.append((-shr, -other))
        if len(members) < 2:
            continue
        x = np.asarray(emb, float)
        # positions-only feasibility: the LP is feasible iff the plane
        # origin lies in the convex hull of the embedded positions, i.e.
        # no open half-plane contains them all (largest angular gap <= pi)
        at_zero = np.all(np.abs(x) < 1e-15, axis=1)
        if not at_zero.any():
            ang = np.sort(np.arctan2(x[:, 1], x[:, 0]))
            gap = max(np.diff(ang).max(initial=0.0),
                      ang[0] + 2.0 * math.pi - ang[-1])
            if gap > math.pi + 1e-9:
                continue
        y = np.array([p.y for p in members])
        fast = _envelopes_at_plane_origin(x, y)
        if fast is not None:
            for val, mu, sense in fast:
                lam = {}
                for k, w in mu:
                    for i, ci in members[k].lam.items():
                        lam[i] = lam.get(i, 0.0) + w * ci
                yield float(val), lam, sense
            continue
        a_eq = np.vstack([x.T, np.ones(len(members))])
        b_eq = np.array([0.0, 0.0, 1.0])
        for sense in (1, -1):
            res = linprog(-sense * y, A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                          method="highs")
            if res.status == 0:
                lam = {}
                for k, w in enumerate(res.x):
                    if w > 1e-12:
                        for i, ci in members[k].lam.items():
                            lam[i] = lam.get(i, 0.0) + w * ci
                yield float(sense * -res.fun), lam, sense


class _SkeletonState:
    """Mutable working state of the 2D hull iteration.

    ``cache`` may be shared between states built on identical sample
    positions (values may differ): it memoises the pairwise geodesic
    table of the samples and the geodesics of later iterations, both
    of which depend on positions only.
    """

    def __init__(self, points: Sequence[ts.TreePoint],
                 values: Sequence[float], cache: Optional[dict] = None):
        self.n = len(points)
        self.cache = cache if cache is not None else {}
        self.samples: List[_Pt] = []
        self.interior: List[_Pt] = []
        self.axis_vert: Dict[int, List[_Pt]] = {a: [] for a in range(10)}
        self.origin_slot: Optional[List[_Pt]] = None
        self.origin_interval: Optional[Tuple[float, float]] = None
        self.iteration = 0
        self.converged = False
        self.new_pts: List[_Pt] = []
        self._plane_sig: Optional[dict] = None
        self._cone_low = math.inf
        self._cone_high = -math.inf
        self._cone_lam_low: Optional[dict] = None
        self._cone_lam_high: Optional[dict] = None
        for i, (p, y) in enumerate(zip(points, values)):
            if p.space != ts.T4:
                raise ValueError("2D hull expects T4 points")
            y = float(y)
            lam = {i: 1.0}
            if p.is_origin:
                pt = _Pt(-1, 0.0, 0.0, y, lam)
                self._note_origin_value(y, lam)
            else:
                u, v = p.coords
                oi = ts.T4_EDGE_INDEX[p.orthant]
                if u == 0.0 or v == 0.0:
                    axis = p.orthant[1] if u == 0.0 else p.orthant[0]
                    pt = _Pt(oi, u, v, y, lam, axis=axis, t=u + v)
                    self.axis_vert[axis].append(pt)
                else:
                    pt = _Pt(oi, u, v, y, lam)
                    self.interior.append(pt)
            self.samples.append(pt)
        self.s_idx, self.s_u, self.s_v = kn.pack_points(points, ts.T4)
        self.s_y = np.asarray(values, float)

    # -- bookkeeping --------------------------------------------------------
    def _note_origin_value(self, y: float, lam: dict):
        if y > self._cone_high:
            self._cone_high, self._cone_lam_high = y, dict(lam)
        if y < self._cone_low:
            self._cone_low, self._cone_lam_low = y, dict(lam)

    def current_pts(self, include_origin: bool = True) -> List[_Pt]:
        out = list(self.interior)
        seen = set()
        for verts in self.axis_vert.values():
            for pt in verts:
                if id(pt) not in seen:
                    seen.add(id(pt))
                    out.append(pt)
        if include_origin and self.origin_slot is not None:
            for pt in self.origin_slot:
                if id(pt) not in seen:
                    seen.add(id(pt))
                    out.append(pt)
        return out

    # -- geodesic passes ------------------------------------------------------
    def _sample_table(self):
        c = self.cache
        if c.get("n") != self.n:
            c.clear()
            c["n"] = self.n
        if "table0" not in c:
            p, q = np.triu_indices(self.n, k=1)
            tbl = ts.batch_geodesics(self.s_idx[p], self.s_u[p], self.s_v[p],
                                     self.s_idx[q], self.s_u[q], self.s_v[q])
            c["table0"] = (tbl, p, q)
        return c["table0"]

    # -- origin bounds ----------------------------------------------------------
    def _origin_bounds(self):
        # the cumulative trackers already cover cone-path chords, origin
        # samples and previously accepted bounds, so the LPs only need the
        # current non-origin vertices
        lo, hi = self._cone_low, self._cone_high
        lam_lo, lam_hi = self._cone_lam_low, self._cone_lam_high
        for val, lam, sense in origin_lp_candidates(
                self.current_pts(include_origin=False)):
            if sense > 0 and val > hi:
                hi, lam_hi = val, lam
            if sense < 0 and val < lo:
                lo, lam_lo = val, lam
        if hi == -math.inf:
            return None
        return lo, hi, lam_lo, lam_hi

    # -- one full iteration -------------------------------------------------------
    def step(self):
        self.iteration += 1
        prev_sig = self._plane_sig
        prev_interval = self.origin_interval

        # pair pass over the new points: collect axis crossings as flat
        # arrays and update the cone-chord extremes for the origin
        cr_axis: List[np.ndarray] = []
        cr_t: List[np.ndarray] = []
        cr_val: List[np.ndarray] = []
        cr_frac: List[np.ndarray] = []
        cr_pair: List[object] = []
        if self.iteration == 1:
            tbl, p, q = self._sample_table()
            ya, yb = self.s_y[p], self.s_y[q]
            cone = np.nonzero(tbl.kind == 2)[0]
            if len(cone):
                f = tbl.cone_frac[cone]
                vals = (1.0 - f) * ya[cone] + f * yb[cone]
                for r in (int(np.argmax(vals)), int(np.argmin(vals))):
                    row = cone[r]
                    fr = float(tbl.cone_frac[row])
                    self._note_origin_value(
                        float(vals[r]),
                        _merge_lam(self.samples[p[row]].lam,
                                   self.samples[q[row]].lam, 1.0 - fr, fr))
            if len(tbl.cross_pair):
                rows = tbl.cross_pair
                f = tbl.cross_frac
                cr_axis.append(tbl.cross_axis.astype(np.int64))
                cr_t.append(tbl.cross_t)
                cr_val.append((1.0 - f) * ya[rows] + f * yb[rows])
                cr_frac.append(f)
                # resolved lazily: only surviving vertices need their pair
                cr_pair.append((p[rows], q[rows]))
        elif self.new_pts:
            cur = self.current_pts(include_origin=False)
            new_ids = {id(x) for x in self.new_pts}
            pts_a, pts_b = [], []
            for pa in self.new_pts:
                for pb in cur:
                    if id(pb) == id(pa):
                        continue
                    if id(pb) in new_ids and id(pb) < id(pa):
                        continue
                    pts_a.append(pa)
                    pts_b.append(pb)
            if pts_a:
                m = len(pts_a)
                ia = np.fromiter((p.orth for p in pts_a), np.int64, m)
                ua = np.fromiter((p.u for p in pts_a), float, m)
                va = np.fromiter((p.v for p in pts_a), float, m)
                ya = np.fromiter((p.y for p in pts_a), float, m)
                ib = np.fromiter((p.orth for p in pts_b), np.int64, m)
                ub = np.fromiter((p.u for p in pts_b), float, m)
                vb = np.fromiter((p.v for p in pts_b), float, m)
                yb = np.fromiter((p.y for p in pts_b), float, m)
                tbl = ts.batch_geodesics(ia, ua, va, ib, ub, vb)
                cone = np.nonzero(tbl.kind == 2)[0]
                if len(cone):
                    f = tbl.cone_frac[cone]
                    vals = (1.0 - f) * ya[cone] + f * yb[cone]
                    for r in (int(np.argmax(vals)), int(np.argmin(vals))):
                        val = float(vals[r])
                        if val > self._cone_high or val < self._cone_low:
                            row = int(cone[r])
                            fr = float(tbl.cone_frac[row])
                            self._note_origin_value(
                                val, _merge_lam(pts_a[row].lam,
                                                pts_b[row].lam, 1.0 - fr, fr))
                if len(tbl.cross_pair):
                    rows = tbl.cross_pair
                    f = tbl.cross_frac
                    cr_axis.append(tbl.cross_axis.astype(np.int64))
                    cr_t.append(tbl.cross_t)
                    cr_val.append((1.0 - f) * ya[rows] + f * yb[rows])
                    cr_frac.append(f)
                    cr_pair.append((pts_a, pts_b, rows))

        # origin bounds from accumulated chords plus the unfolding LPs
        bounds = self._origin_bounds()
        if bounds is not None:
            lo, hi, lam_lo, lam_hi = bounds
            self.origin_slot = [_Pt(-1, 0.0, 0.0, hi, lam_hi or {}),
                                _Pt(-1, 0.0, 0.0, lo, lam_lo or {})]
            self.origin_interval = (lo, hi)
            self._note_origin_value(hi, lam_hi or {})
            self._note_origin_value(lo, lam_lo or {})

        # per-axis insert-and-prune: the 2D hull of existing vertices,
        # new crossings and the origin values; only vertices survive
        if cr_axis:
            all_axis = np.concatenate(cr_axis)
            all_t = np.concatenate(cr_t)
            all_val = np.concatenate(cr_val)
            all_frac = np.concatenate(cr_frac)
            offsets = np.cumsum([0] + [len(a) for a in cr_axis])

            def pair_at(row: int):
                chunk = int(np.searchsorted(offsets, row, side="right")) - 1
                src = cr_pair[chunk]
                local = row - int(offsets[chunk])
                if len(src) == 2:
                    pi, qi = src
                    return self.samples[pi[local]], self.samples[qi[local]]
                pa_l, pb_l, rws = src
                r = int(rws[local])
                return pa_l[r], pb_l[r]
        else:
            all_axis = np.zeros(0, dtype=np.int64)
            all_t = all_val = all_frac = np.zeros(0)

            def pair_at(row: int):
                raise IndexError(row)
        fresh: List[_Pt] = []
        sig = {}
        for axis in range(10):
            ex = self.axis_vert[axis]
            sel = np.nonzero(all_axis == axis)[0]
            n_ex = len(ex)
            n_or = 0 if self.origin_slot is None else len(self.origin_slot)
            tcol = np.concatenate([
                np.array([pt.t for pt in ex]),
                all_t[sel],
                np.zeros(n_or),
            ])
            ycol = np.concatenate([
                np.array([pt.y for pt in ex]),
                all_val[sel],
                np.array([pt.y for pt in self.origin_slot])
                if n_or else np.zeros(0),
            ])
            if len(tcol) == 0:
                sig[axis] = ()
                continue
            keep = _hull_vertices_2d(np.column_stack([tcol, ycol]))
            kept: Dict[Tuple[float, float], int] = {}
            for k in keep:
                locv = (round(float(tcol[k]), 12), round(float(ycol[k]), 12))
                prev = kept.get(locv)
                # prefer existing vertices over equal freshly built ones
                if prev is None or (prev >= n_ex and k < n_ex):
                    kept[locv] = k
            verts: List[_Pt] = []
            for k in kept.values():
                if k < n_ex:
                    verts.append(ex[k])
                elif k < n_ex + len(sel):
                    row = int(sel[k - n_ex])
                    pa, pb = pair_at(row)
                    frac = float(all_frac[row])
                    tpos = float(all_t[row])
                    home, uu, vv = _axis_home(axis, tpos)
                    pt = _Pt(home, uu, vv, float(all_val[row]),
                             _merge_lam(pa.lam, pb.lam, 1.0 - frac, frac),
                             axis=axis, t=tpos)
                    verts.append(pt)
                    fresh.append(pt)
                # origin rows only confirm the origin stays a vertex
            self.axis_vert[axis] = verts
            sig[axis] = tuple(sorted(
                (round(pt.t, 12), round(pt.y, 12)) for pt in verts))
        if self.origin_interval is not None:
            sig["origin"] = (round(self.origin_interval[0], 12),
                             round(self.origin_interval[1], 12))
        self.new_pts = fresh
        self._plane_sig = sig
        if prev_sig is not None:
            self.converged = (_signatures_close(prev_sig, sig, 1e-8)
                              and _interval_close(prev_interval,
                                                  self.origin_interval, 1e-8))


def _hull_vertices_2d(coords: np.ndarray) -> set:
    """Indices of 2D convex hull vertices (extremes when degenerate)."""
    m = len(coords)
    if m <= 2:
        return set(range(m))
    try:
        return set(int(i) for i in ConvexHull(coords).vertices)
    except QhullError:
        out = set()
        for order in (np.lexsort((coords[:, 1], coords[:, 0])),
                      np.lexsort((coords[:, 0], coords[:, 1]))):
            out.add(int(order[0]))
            out.add(int(order[-1]))
        return out


def _signatures_close(a: dict, b: dict, tol: float) -> bool:
    if set(a) != set(b):
        return False
    for k in a:
        if k == "origin":
            continue
        if not _point_sets_close(a[k], b[k], tol):
            return False
    return True


def _point_sets_close(pa, pb, tol) -> bool:
    """Symmetric Hausdorff closeness of two (t, y) vertex tuples."""
    if not pa and not pb:
        return True
    if not pa or not pb:
        return False
    a = np.asarray(pa, float)
    b = np.asarray(pb, float)
    d = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    return max(d.min(axis=1).max(), d.min(axis=0).max()) < tol


def _interval_close(a, b, tol) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a[0] - b[0]) < tol and abs(a[1] - b[1]) < tol


def origin_bounds_lp(points: Sequence[ts.TreePoint], values: Sequence[float]):
    """Origin interval implied by the 60 unfolding LPs alone.

    Returns (y_low, y_high), or ``None`` when every LP is infeasible
    (the origin lies outside all three-quadrant hulls of the points).
    """
    state = _SkeletonState(points, values)
    pts = state.current_pts() + [p for p in state.samples if p.orth < 0]
    lo, hi = math.inf, -math.inf
    for val, _lam, sense in origin_lp_candidates(pts):
        if sense > 0:
            hi = max(hi, val)
        else:
            lo = min(lo, val)
    if hi == -math.inf:
        return None
    return lo, hi


# ---------------------------------------------------------------------------
# finished hull: faces, evaluation, serialisation
# ---------------------------------------------------------------------------

@dataclass
class Face:
    orth: int
    pos: np.ndarray          # (3, 2) vertex coordinates in the orthant
    val: np.ndarray          # (3,) values
    lam: Tuple[dict, dict, dict]
    twice_area: float
    affine: Tuple[float, float, float]   # value = a*u + b*v + c


@dataclass
class Piece:
    """Measure-zero hull content of an orthant (for exact evaluation)."""

    orth: int
    kind: str                # "chain" or "point"
    base: np.ndarray         # (2,) base coordinates
    direction: np.ndarray    # (2,) unit direction (chains)
    s: np.ndarray            # chain parameters (ascending)
    val: np.ndarray
    on_axis: Optional[int]   # axis id when the piece lies on an axis


@dataclass
class Hull2D:
    """Finished approximation of the concave majorant on T4."""

    faces: List[Face]
    pieces: List[Piece]
    vertices: List[_Pt]
    origin_interval: Optional[Tuple[float, float]]
    iterations: int
    converged: bool

    @property
    def space(self) -> str:
        return ts.T4

    def orthant_faces(self, orth: int) -> List[Face]:
        return [f for f in self.faces if f.orth == orth]

    def to_json_dict(self) -> dict:
        verts = []
        for p in self.vertices:
            orth = None if p.orth < 0 else list(ts.T4_EDGES[p.orth])
            verts.append([orth, [p.u, p.v], p.y])
        faces = [{
            "orthant": list(ts.T4_EDGES[f.orth]),
            "pos": f.pos.tolist(),
            "val": f.val.tolist(),
        } for f in self.faces]
        return {
            "space": ts.T4,
            "vertices": verts,
            "faces": faces,
            "originInterval": list(self.origin_interval)
            if self.origin_interval else None,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Hull2D":
        faces = []
        for f in d["faces"]:
            pos = np.asarray(f["pos"], float)
            val = np.asarray(f["val"], float)
            faces.append(_make_face(ts.T4_EDGE_INDEX[tuple(f["orthant"])],
                                    pos, val, ({}, {}, {})))
        interval = d.get("originInterval")
        return Hull2D(faces, [], [],
                      tuple(interval) if interval else None,
                      d.get("iterations", 0), d.get("converged", True))


def _make_face(orth, pos, val, lam) -> Face:
    (u1, v1), (u2, v2), (u3, v3) = pos
    det = (u2 - u1) * (v3 - v1) - (u3 - u1) * (v2 - v1)
    twice_area = abs(det)
    if twice_area > 0:
        a = ((val[1] - val[0]) * (v3 - v1) - (val[2] - val[0]) * (v2 - v1)) / det
        b = ((val[2] - val[0]) * (u2 - u1) - (val[1] - val[0]) * (u3 - u1)) / det
        c = val[0] - a * u1 - b * v1
    else:
        a = b = 0.0
        c = float(np.max(val))
    return Face(orth, np.asarray(pos, float), np.asarray(val, float),
                lam, float(twice_area), (float(a), float(b), float(c)))


def _orthant_hull_pieces(orth: int, pts: List[_Pt]):
    """Upper faces and degenerate pieces of one orthant's 3D hull."""
    faces: List[Face] = []
    pieces: List[Piece] = []
    if not pts:
        return faces, pieces
    arr = np.array([(*p.coords_in(orth), p.y) for p in pts])
    _, first = np.unique(arr.round(12), axis=0, return_index=True)
    order = sorted(int(i) for i in first)
    pts = [pts[i] for i in order]
    arr = arr[order]
    m = len(pts)
    if m >= 4:
        try:
            hull = ConvexHull(arr, qhull_options="Qt")
            for simplex, eq in zip(hull.simplices, hull.equations):
                if eq[2] > 1e-12:
                    tri = [pts[i] for i in simplex]
                    faces.append(_make_face(
                        orth, arr[simplex][:, :2], arr[simplex][:, 2],
                        tuple(p.lam for p in tri)))
            return faces, pieces
        except QhullError:
            pass
    # degenerate configurations: flat, collinear or a single point
    proj = arr[:, :2]
    if m >= 3:
        sv, vt = _svd_rows(arr)
        if int(np.sum(sv > 1e-9)) == 2 and abs(vt[2][2]) > 1e-9:
            # flat non-vertical sheet: project and fan-triangulate
            try:
                ring = list(ConvexHull(proj).vertices)
                for k in range(1, len(ring) - 1):
                    tri_idx = [ring[0], ring[k], ring[k + 1]]
                    tri = [pts[i] for i in tri_idx]
                    faces.append(_make_face(
                        orth, arr[tri_idx][:, :2], arr[tri_idx][:, 2],
                        tuple(p.lam for p in tri)))
                return faces, pieces
            except QhullError:
                pass                 # projection collinear: fall through
    # remaining cases project onto a line segment or a single point
    sv2, vt2 = _svd_rows(proj)
    if m == 1 or sv2[0] < 1e-12:
        k = int(np.argmax(arr[:, 2]))
        u, v = proj[k]
        pieces.append(Piece(orth, "point", proj[k].astype(float),
                            np.zeros(2), np.zeros(1),
                            arr[k:k + 1, 2].copy(),
                            _axis_of_position(orth, u, v)))
        return faces, pieces
    direction = vt2[0]
    s_raw = proj @ direction
    base = proj[int(np.argmin(s_raw))].astype(float)
    s = (proj - base) @ direction
    chain = _upper_chain([(float(s[i]), float(arr[i, 2]), pts[i])
                          for i in range(m)])
    on_axis = None
    if np.all(np.abs(proj[:, 1]) < 1e-12):
        on_axis = ts.T4_EDGES[orth][0]
    elif np.all(np.abs(proj[:, 0]) < 1e-12):
        on_axis = ts.T4_EDGES[orth][1]
    pieces.append(Piece(orth, "chain", base, direction.astype(float),
                        np.array([r[0] for r in chain]),
                        np.array([r[1] for r in chain]), on_axis))
    return faces, pieces


def _svd_rows(rows: np.ndarray):
    """Singular values and right singular vectors of centred rows."""
    centred = rows - rows.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=True)
    if len(sv) < rows.shape[1]:
        sv = np.concatenate([sv, np.zeros(rows.shape[1] - len(sv))])
    return sv, vt


def _axis_of_position(orth: int, u: float, v: float) -> Optional[int]:
    if u == 0.0 and v == 0.0:
        return -1                       # origin marker
    if v == 0.0:
        return ts.T4_EDGES[orth][0]
    if u == 0.0:
        return ts.T4_EDGES[orth][1]
    return None


def _build_hull(state: _SkeletonState) -> Hull2D:
    pts = state.current_pts()
    faces: List[Face] = []
    pieces: List[Piece] = []
    for orth in range(15):
        mine = [p for p in pts if orth in p.orthants()]
        f, pc = _orthant_hull_pieces(orth, mine)
        faces.extend(f)
        pieces.extend(pc)
    return Hull2D(faces, pieces, pts, state.origin_interval,
                  state.iteration, state.converged)


def skeleton_state(points: Sequence[ts.TreePoint], values: Sequence[float],
                   cache: Optional[dict] = None) -> _SkeletonState:
    """Initial working state S_0 of the skeleton iteration."""
    return _SkeletonState(points, values, cache)


def skeleton_step(state: _SkeletonState) -> Hull2D:
    """Run one skeleton iteration in place; returns the rebuilt hull."""
    state.step()
    return _build_hull(state)


def hull_2d(points: Sequence[ts.TreePoint], values: Sequence[float],
            tol: float = 1e-8, max_iter: int = 5,
            cache: Optional[dict] = None) -> Hull2D:
    """Approximate least concave majorant of values on T4.

    Iterates the skeleton construction until the boundary vertex sets
    and the origin interval move less than ``tol``, or ``max_iter``
    iterations are reached.  Points confined to a single quadrant skip
    the iteration: the Euclidean hull is already exact there.
    """
    state = _SkeletonState(points, values, cache)
    occupied = {p.orth for p in state.samples if p.axis is None}
    boundary = any(p.axis is not None or p.orth < 0 for p in state.samples)
    if len(occupied) == 1 and not boundary:
        state.converged = True
        return _build_hull(state)
    for _ in range(max_iter):
        state.step()
        if state.converged:
            break
    return _build_hull(state)


def shift_values(hull, t: float):
    """Add a constant to a majorant in place (hull geometry unchanged).

    The least majorant of ``y + t`` is the majorant of ``y`` plus ``t``:
    vertex positions, faces and convex coefficients are unaffected, so
    normalisation shifts can reuse a built hull.
    """
    if isinstance(hull, ConcavePWL1D):
        for br in hull.branches.values():
            br.val = br.val + t
        if hull.origin_value is not None:
            hull.origin_value += t
        return hull
    for f in hull.faces:
        f.val = f.val + t
        a, b, c = f.affine
        f.affine = (a, b, c + t)
    for pc in hull.pieces:
        pc.val = pc.val + t
    for p in hull.vertices:
        p.y += t
    if hull.origin_interval is not None:
        hull.origin_interval = (hull.origin_interval[0] + t,
                                hull.origin_interval[1] + t)
    return hull


def evaluate_hbar(hull, x: ts.TreePoint) -> float:
    """Value of a finished majorant at a single point (-inf outside)."""
    if isinstance(hull, ConcavePWL1D):
        return evaluate_1d(hull, x)
    if x.space != ts.T4:
        raise ValueError("expected a T4 point")
    if x.is_origin and hull.origin_interval is not None:
        return float(hull.origin_interval[1])
    if x.is_origin:
        probes = [(orth, 0.0, 0.0) for orth in range(15)]
    else:
        probes = [(orth, *ts.coords_in_orthant(x, orth))
                  for orth in ts.orthants_containing(x)]
    best = -math.inf
    for orth, u, v in probes:
        for f in hull.faces:
            if f.orth != orth:
                continue
            val = _face_value_at(f, u, v)
            if val is not None:
                best = max(best, val)
        for pc in hull.pieces:
            if pc.orth != orth:
                continue
            val = _piece_value_at(pc, u, v)
            if val is not None:
                best = max(best, val)
    return best


def _face_value_at(f: Face, u: float, v: float, eps: float = 1e-9):
    (u1, v1), (u2, v2), (u3, v3) = f.pos
    det = (u2 - u1) * (v3 - v1) - (u3 - u1) * (v2 - v1)
    if det == 0.0:
        return None
    b1 = ((u - u1) * (v3 - v1) - (u3 - u1) * (v - v1)) / det
    b2 = ((u2 - u1) * (v - v1) - (u - u1) * (v2 - v1)) / det
    if b1 >= -eps and b2 >= -eps and b1 + b2 <= 1.0 + eps:
        a, b, c = f.affine
        return a * u + b * v + c
    return None


def _piece_value_at(pc: Piece, u: float, v: float, eps: float = 1e-9):
    if pc.kind == "point":
        if math.hypot(u - pc.base[0], v - pc.base[1]) <= eps:
            return float(pc.val[0])
        return None
    rel = np.array([u, v]) - pc.base
    s = float(rel @ pc.direction)
    perp = rel - s * pc.direction
    if math.hypot(*perp) > eps:
        return None
    if s < pc.s[0] - eps or s > pc.s[-1] + eps:
        return None
    return float(np.interp(s, pc.s, pc.val))


def evaluate_hbar_packed(hull, idx: np.ndarray, u: np.ndarray,
                         v: np.ndarray) -> np.ndarray:
    """Vectorised evaluation over packed T4 arrays (faces only).

    Measure-zero pieces (chains, points) are ignored, which is exact
    almost everywhere and in particular at grid midpoints.
    """
    if isinstance(hull, ConcavePWL1D):
        return evaluate_1d_packed(hull, idx, u)
    out = np.full(len(idx), -np.inf)
    for orth in range(15):
        mask = idx == orth
        if not mask.any():
            continue
        uu, vv = u[mask], v[mask]
        res = np.full(uu.shape, -np.inf)
        for f in hull.faces:
            if f.orth != orth:
                continue
            (u1, v1), (u2, v2), (u3, v3) = f.pos
            det = (u2 - u1) * (v3 - v1) - (u3 - u1) * (v2 - v1)
            if det == 0.0:
                continue
            b1 = ((uu - u1) * (v3 - v1) - (u3 - u1) * (vv - v1)) / det
            b2 = ((u2 - u1) * (vv - v1) - (uu - u1) * (v2 - v1)) / det
            inside = (b1 >= -1e-9) & (b2 >= -1e-9) & (b1 + b2 <= 1.0 + 1e-9)
            if inside.any():
                a, b, c = f.affine
                np.maximum(res, np.where(inside, a * uu + b * vv + c, -np.inf),
                           out=res)
        out[mask] = res
    return out


def _evaluate_hbar_lp(hull: Hull2D, x: ts.TreePoint) -> float:
    """Reference evaluation: LP over hull vertices (slow, exact)."""
    best = -math.inf
    orths = range(15) if x.is_origin else ts.orthants_containing(x)
    for orth in orths:
        target = (0.0, 0.0) if x.is_origin else ts.coords_in_orthant(x, orth)
        pts = [p for p in hull.vertices if orth in p.orthants()]
        if not pts:
            continue
        coords = np.array([p.coords_in(orth) for p in pts])
        y = np.array([p.y for p in pts])
        a_eq = np.vstack([coords.T, np.ones(len(pts))])
        b_eq = np.array([target[0], target[1], 1.0])
        res = linprog(-y, A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                      method="highs")
        if res.status == 0:
            best = max(best, -res.fun)
    return best
