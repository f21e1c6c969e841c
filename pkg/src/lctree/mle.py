"""Maximum likelihood estimation of log-concave densities on tree space.

The estimator maximises the log likelihood over log-concave densities, or
equivalently minimises the convex objective

    sigma(y) = -sum_i w_i * y_i + integral of exp(hbar_y)

over vectors ``y`` of candidate log-density values at the sample points,
where ``hbar_y`` is the least concave majorant of ``y`` on the sample
positions.  At the minimiser the integral equals one and ``exp(hbar_y)``
is the maximum likelihood density.

Claims honoured by this module and checked in the test-suite:

* ``sigma`` is convex in ``y`` and invariant under adding a constant to
  ``y`` followed by renormalisation; two samples at positions 0 and 1 of
  one branch with ``y = (0, 0)`` give ``sigma = 1``.
* ``psi(y) = sum_i w_i * hbar_y(X_i) - integral exp(hbar_y)`` equals ``-1``
  for the uniform density on a unit segment evaluated at its own samples.
* ``fit`` produces monotonically decreasing objective values, a final
  density integrating to one, and matches a generic convex optimiser on
  single-branch data to high accuracy.
* For sample sets violating the support conditions (all mass of some part
  of the hull concentrated on lower-dimensional strata not attached to a
  full-dimensional region) the estimator does not exist:
  ``check_existence`` reports ``overall=False`` and ``fit`` raises
  ``ExistenceViolationError`` (or warns, for callers that iterate over
  tentative weightings).
* If the objective is unbounded below, iterates diverge; ``fit`` raises
  ``UnboundedError`` once ``max |y_i|`` exceeds a guard threshold.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings

import numpy as np
from scipy.optimize import minimize as so_minimize

from . import hull as hl
from . import integrate as ig
from . import treespace as ts
from ._kernels import pack_points, point_to_points

__all__ = [
    "LOGCONCAVE",
    "BENT",
    "ExistenceViolationError",
    "UnboundedError",
    "NonConvergenceError",
    "ExistenceReport",
    "LogConcaveEstimate",
    "sigma",
    "psi",
    "check_existence",
    "fit",
    "merge_duplicates",
]

LOGCONCAVE = "logconcave"
BENT = "bent"

#: labels assigned to orthants by :func:`check_existence`
LABEL_EMPTY = "Empty"
LABEL_FULLDIM = "FullDim"
LABEL_BOUNDARY_SUPPORTED = "BoundaryOnly-Supported"
LABEL_BOUNDARY_UNSUPPORTED = "BoundaryOnly-Unsupported"


class ExistenceViolationError(RuntimeError):
    """No maximum likelihood estimate exists for the given samples.

    Attributes
    ----------
    report : ExistenceReport
        Per-orthant classification explaining the violation.
    """

    def __init__(self, report):
        self.report = report
        bad = sorted(o for o, lab in report.labels.items()
                     if lab == LABEL_BOUNDARY_UNSUPPORTED)
        super().__init__(
            "no maximum likelihood estimate exists: hull content in "
            f"orthant(s) {bad} lies on lower-dimensional strata not attached "
            "to any full-dimensional part of the hull")


class UnboundedError(RuntimeError):
    """The likelihood is unbounded; iterates diverged past the guard."""


class NonConvergenceError(RuntimeError):
    """The solver exhausted its iteration budget before converging."""


@dataclasses.dataclass
class ExistenceReport:
    """Per-orthant support classification of a sample hull.

    Attributes
    ----------
    labels : dict
        Maps each quadrant (edge pair, e.g. ``(0, 1)``) to one of
        ``"Empty"``, ``"FullDim"``, ``"BoundaryOnly-Supported"`` or
        ``"BoundaryOnly-Unsupported"``.
    overall : bool
        True when no orthant is labelled ``BoundaryOnly-Unsupported``,
        i.e. a maximum likelihood estimate exists.
    """

    labels: dict
    overall: bool

    def to_json_dict(self):
        return {
            "labels": {f"{a}-{b}": lab for (a, b), lab in self.labels.items()},
            "overall": bool(self.overall),
        }


def _space_of(points):
    if not points:
        raise ValueError("need at least one sample point")
    space = points[0].space
    for p in points:
        if p.space != space:
            raise ValueError("all sample points must live in the same space")
    return space


def _norm_weights(points, weights):
    n = len(points)
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must match the number of sample points")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    tot = float(w.sum())
    if tot <= 0.0:
        raise ValueError("weights must not all be zero")
    return w / tot


def merge_duplicates(points, weights=None):
    """Merge samples at identical positions, summing their weights.

    Parameters
    ----------
    points : list of TreePoint
    weights : array_like, optional
        Nonnegative weights; uniform if omitted.  They are normalised to
        sum to one.

    Returns
    -------
    (points, weights)
        Deduplicated points (first occurrence order) and merged weights.
    """
    w = _norm_weights(points, weights)
    seen = {}
    out_pts = []
    out_w = []
    for p, wi in zip(points, w):
        key = (p.space, p.orthant, tuple(p.coords))
        j = seen.get(key)
        if j is None:
            seen[key] = len(out_pts)
            out_pts.append(p)
            out_w.append(wi)
        else:
            out_w[j] += wi
    return out_pts, np.asarray(out_w)


def _build_hull(points, y, mode, space, tol, max_iter, cache):
    if space == ts.T3:
        return hl.concave_hull_1d(points, y, mode=mode)
    return hl.hull_2d(points, y, tol=tol, max_iter=max_iter, cache=cache)


def sigma(y, points, weights=None, mode=LOGCONCAVE, *, hull_tol=1e-8,
          hull_max_iter=5, cache=None):
    """Convex objective ``-sum_i w_i y_i + integral exp(hbar_y)``.

    ``hbar_y`` is the least concave (or bent-concave) majorant of the
    values ``y`` at the sample positions.  Minimising ``sigma`` over ``y``
    is equivalent to maximising the log likelihood over log-concave
    densities.

    Parameters
    ----------
    y : array_like, shape (n,)
        Candidate log-density values at the sample points.
    points : list of TreePoint
        Sample positions (all in the same space).
    weights : array_like, optional
        Sample weights, normalised to sum to one; uniform if omitted.
    mode : {"logconcave", "bent"}
        Majorant family (``"bent"`` only on the 3-spider).
    hull_tol, hull_max_iter : float, int
        Convergence controls for the quadrant-wise hull construction.
    cache : dict, optional
        Geodesic cache reused across calls with identical positions.

    Returns
    -------
    float
    """
    space = _space_of(points)
    w = _norm_weights(points, weights)
    y = np.asarray(y, dtype=float)
    if y.shape != (len(points),):
        raise ValueError("y must have one value per sample point")
    hull = _build_hull(points, y, mode, space, hull_tol, hull_max_iter, cache)
    return float(-w @ y + ig.integrate_exp_hull(hull))


def psi(y, points, weights=None, mode=LOGCONCAVE, *, hull_tol=1e-8,
        hull_max_iter=5, cache=None):
    """Log-likelihood functional ``sum_i w_i hbar_y(X_i) - integral exp(hbar_y)``.

    Evaluates the majorant (not the raw values) at the samples, so it is
    well defined for any ``y``; at the maximiser it equals the maximal
    log likelihood.  For the uniform density on a unit segment, evaluated
    at samples drawn from it, ``psi = -1``.

    Parameters are as in :func:`sigma`.

    Returns
    -------
    float
    """
    space = _space_of(points)
    w = _norm_weights(points, weights)
    y = np.asarray(y, dtype=float)
    if y.shape != (len(points),):
        raise ValueError("y must have one value per sample point")
    hull = _build_hull(points, y, mode, space, hull_tol, hull_max_iter, cache)
    hvals = np.array([hl.evaluate_hbar(hull, p) for p in points])
    return float(w @ hvals - ig.integrate_exp_hull(hull))


def check_existence(points, *, area_eps=1e-9, hull_tol=1e-8, hull_max_iter=5,
                    cache=None):
    """Classify quadrant-wise hull support and decide MLE existence.

    Builds the hull footprint of the sample positions (values are
    irrelevant for the footprint) and labels every quadrant:

    * ``"Empty"`` -- no hull content;
    * ``"FullDim"`` -- content of positive area;
    * ``"BoundaryOnly-Supported"`` -- content confined to boundary axes or
      the origin, each part attached to some full-dimensional quadrant;
    * ``"BoundaryOnly-Unsupported"`` -- measure-zero content that is
      interior to the quadrant, or boundary content not attached to any
      full-dimensional quadrant.  Density mass cannot concentrate there,
      so no maximiser exists.

    Parameters
    ----------
    points : list of TreePoint
        Sample positions on the quadrant complex.

    Returns
    -------
    ExistenceReport
    """
    space = _space_of(points)
    if space == ts.T3:
        distinct = {(p.orthant, tuple(p.coords)) for p in points}
        ok = len(distinct) >= 2
        return ExistenceReport(labels={}, overall=ok)
    y = np.zeros(len(points))
    hull = hl.hull_2d(points, y, tol=hull_tol, max_iter=hull_max_iter,
                      cache=cache)
    n_orth = len(ts.T4_EDGES)
    areas = np.zeros(n_orth)
    for f in hull.faces:
        areas[f.orth] += 0.5 * f.twice_area
    pieces = [[] for _ in range(n_orth)]
    for pc in hull.pieces:
        pieces[pc.orth].append(pc)
    lab = [None] * n_orth
    for o in range(n_orth):
        if areas[o] > area_eps:
            lab[o] = LABEL_FULLDIM
        elif not pieces[o]:
            lab[o] = LABEL_EMPTY
    fulldim = {o for o in range(n_orth) if lab[o] == LABEL_FULLDIM}
    for o in range(n_orth):
        if lab[o] is not None:
            continue
        supported = True
        for pc in pieces[o]:
            if pc.on_axis is None:
                supported = False  # measure-zero content interior to quadrant
                break
            if pc.on_axis == -1:
                attached = bool(fulldim)
            else:
                attached = any(k in fulldim
                               for k in ts.T4_AXIS_ORTHANTS[pc.on_axis])
            if not attached:
                supported = False
                break
        lab[o] = (LABEL_BOUNDARY_SUPPORTED if supported
                  else LABEL_BOUNDARY_UNSUPPORTED)
    labels = {ts.T4_EDGES[o]: lab[o] for o in range(n_orth)}
    overall = all(s != LABEL_BOUNDARY_UNSUPPORTED for s in lab)
    return ExistenceReport(labels=labels, overall=overall)


def _pilot_log_values(points, weights, space):
    """Log of a kernel density pilot at the sample points, clipped to [-10, 10]."""
    n = len(points)
    if n == 1:
        return np.zeros(1)
    idx, u, v = pack_points(points, space)
    dmat = np.empty((n, n))
    for i, p in enumerate(points):
        dmat[i] = point_to_points(p, idx, u, v)
    # spread estimate from mean squared pairwise distance
    ms = float((weights @ (dmat ** 2) @ weights))
    sig = math.sqrt(max(ms / 2.0, 1e-12))
    dim = 1 if space == ts.T3 else 2
    h = 1.06 * sig * n ** (-1.0 / (4 + dim))
    h = max(h, 1e-6)
    kern = np.exp(-0.5 * (dmat / h) ** 2) / ((2.0 * math.pi) ** (dim / 2.0) * h ** dim)
    dens = kern @ weights
    return np.clip(np.log(np.maximum(dens, 1e-300)), -10.0, 10.0)


def _hull_sample_values(hull, idx, u, v):
    """Majorant values at packed sample positions (fast, may undershoot).

    Uses the vectorised face evaluation; positions carried only by
    measure-zero pieces keep ``-inf``, which callers treat as "no lift".
    """
    vals = hl.evaluate_hbar_packed(hull, idx, u, v)
    mask = idx < 0
    if mask.any():
        if isinstance(hull, hl.ConcavePWL1D):
            ov = (hull.origin_value if hull.origin_value is not None
                  else -np.inf)
        else:
            oi = hull.origin_interval
            ov = oi[1] if oi is not None else -np.inf
        vals[mask] = ov
    return vals


def _slsqp_best(fg, z0, constraint_rows, bounds=None):
    """Minimise a smooth convex objective under ``rows @ z >= 0``.

    Runs sequential quadratic programming twice (restarting once from
    the first answer guards against premature stops) and returns the
    better iterate.
    """
    z0 = np.asarray(z0, float)
    mat = None
    cons = []
    if len(constraint_rows):
        mat = np.asarray(constraint_rows, float)
        cons = [{"type": "ineq",
                 "fun": lambda z, m=mat: m @ z,
                 "jac": lambda z, m=mat: m}]

    def feasible(z):
        return mat is None or bool(np.all(mat @ z >= -1e-9))

    best_z, best_f = None, math.inf
    if feasible(z0):
        best_z, best_f = z0.copy(), float(fg(z0)[0])
    z_start = z0
    for _ in range(2):
        res = so_minimize(lambda z: fg(z)[0], z_start,
                          jac=lambda z: fg(z)[1],
                          method="SLSQP", constraints=cons, bounds=bounds,
                          options={"maxiter": 1000, "ftol": 1e-14})
        z_res = np.asarray(res.x, float)
        if feasible(z_res):
            f_res = float(fg(z_res)[0])
            if f_res < best_f:
                best_z, best_f = z_res, f_res
        z_start = res.x
    return best_z, best_f


def _polish_t3_exact(pts, w, y_init, mode):
    """Solve the 3-spider problem exactly as smooth convex programs.

    Restricted to value vectors that are concave along every geodesic
    (an auxiliary origin value is added when the sample hull crosses
    the origin), the least majorant is plain interpolation, so the
    objective is smooth with a closed-form gradient and the restriction
    loses nothing: any candidate can be replaced by its majorant values
    without increasing the objective.  Concavity is a set of linear
    constraints; the relaxed slope condition of the bent class is, per
    branch pair, a union of two half-spaces, so the bent optimum is the
    best of one convex solve per admissible pair regime.
    """
    n = len(pts)
    branch_rows = {}
    origin_idx = None
    for i, p in enumerate(pts):
        if p.is_origin:
            origin_idx = i
        else:
            branch_rows.setdefault(p.orthant, []).append(
                (float(p.coords[0]), i))
    for rows in branch_rows.values():
        rows.sort()
    through = len(branch_rows) >= 2 or origin_idx is not None
    aux = through and origin_idx is None
    m = n + (1 if aux else 0)
    o_var = origin_idx if origin_idx is not None else (n if through else None)

    segs = []
    for rows in branch_rows.values():
        chain = ([(0.0, o_var)] if through else []) + rows
        for (t0, j0), (t1, j1) in zip(chain, chain[1:]):
            segs.append((t1 - t0, j0, j1))
    seg_len = np.array([s[0] for s in segs])
    seg_a = np.array([s[1] for s in segs], dtype=int)
    seg_b = np.array([s[2] for s in segs], dtype=int)
    w_full = np.zeros(m)
    w_full[:n] = w

    def fg(z):
        val, da, db = ig.exp_segment_integral_grad(
            seg_len, z[seg_a], z[seg_b])
        g = -w_full.copy()
        np.add.at(g, seg_a, da)
        np.add.at(g, seg_b, db)
        return float(-w_full @ z + np.sum(val)), g

    base_rows = []
    for rows in branch_rows.values():
        chain = ([(0.0, o_var)] if through else []) + rows
        for (t0, j0), (t1, j1), (t2, j2) in zip(chain, chain[1:], chain[2:]):
            r = np.zeros(m)
            r[j0] -= 1.0 / (t1 - t0)
            r[j1] += 1.0 / (t1 - t0) + 1.0 / (t2 - t1)
            r[j2] -= 1.0 / (t2 - t1)
            base_rows.append(r)

    def pair_row(ca, cb):
        # ca * s_first(a) + cb * s_first(b) <= 0 as a `>= 0` row
        (ta, ja), (tb, jb) = ca[1], cb[1]
        r = np.zeros(m)
        r[ja] -= ca[0] / ta
        r[jb] -= cb[0] / tb
        r[o_var] += ca[0] / ta + cb[0] / tb
        return r

    pairs = []
    if through:
        occupied = sorted(branch_rows)
        for x in range(len(occupied)):
            for yb in range(x + 1, len(occupied)):
                pairs.append((branch_rows[occupied[x]][0],
                              branch_rows[occupied[yb]][0]))

    hull0 = hl.concave_hull_1d(pts, y_init, mode=mode)
    z0 = np.empty(m)
    for i, p in enumerate(pts):
        z0[i] = hl.evaluate_1d(hull0, p)
    if aux:
        z0[n] = hull0.origin_value

    if mode == LOGCONCAVE:
        rows = list(base_rows)
        rows += [pair_row((1.0, a), (1.0, b)) for a, b in pairs]
        z, _ = _slsqp_best(fg, z0, rows)
        return z[:n]
    best_z, best_f = None, math.inf
    for regime in range(1 << len(pairs)):
        rows = list(base_rows)
        for k, (a, b) in enumerate(pairs):
            if regime >> k & 1:
                rows.append(pair_row((2.0, a), (1.0, b)))
            else:
                rows.append(pair_row((1.0, a), (2.0, b)))
        z, f = _slsqp_best(fg, z0, rows)
        if f < best_f:
            best_z, best_f = z, f
    return best_z[:n]


def _face_membership_row(hull, n, oi, uu, vv):
    """Coefficients expressing the hull value at a position in ``y``.

    Searches the faces of every orthant whose closure contains the
    position for one covering it, and combines the corners'
    convex-combination provenance with the barycentric coordinates;
    returns ``None`` when the position is carried only by measure-zero
    pieces (whose provenance is not kept).
    """
    if oi < 0:
        cands = [(o, 0.0, 0.0) for o in range(15)]
    else:
        cands = [(oi, uu, vv)]
        axis = None
        if vv == 0.0:
            axis, t = ts.T4_EDGES[oi][0], uu
        elif uu == 0.0:
            axis, t = ts.T4_EDGES[oi][1], vv
        if axis is not None:
            for o, edge in enumerate(ts.T4_EDGES):
                if o != oi and axis in edge:
                    cands.append((o, t, 0.0) if edge[0] == axis
                                 else (o, 0.0, t))
    best = None
    best_val = -math.inf
    for o, pu, pv in cands:
        pos_uv = (pu, pv)
        for f in hull.faces:
            if f.orth != o or f.twice_area <= 0.0:
                continue
            (u1, v1), (u2, v2), (u3, v3) = f.pos
            det = (u2 - u1) * (v3 - v1) - (u3 - u1) * (v2 - v1)
            if det == 0.0:
                continue
            du, dv = pos_uv[0] - u1, pos_uv[1] - v1
            b2 = (du * (v3 - v1) - dv * (u3 - u1)) / det
            b3 = (dv * (u2 - u1) - du * (v2 - v1)) / det
            b1 = 1.0 - b2 - b3
            if min(b1, b2, b3) < -1e-9:
                continue
            val = b1 * f.val[0] + b2 * f.val[1] + b3 * f.val[2]
            if val > best_val:
                row = np.zeros(n)
                for bk, lam in zip((b1, b2, b3), f.lam):
                    for i, c in lam.items():
                        row[i] += bk * c
                best, best_val = row, val
    return best


def _polish_t4_frozen(pts, w, y_init, hull_tol, iters, cache, rounds=25):
    """Iterate exact solves of the frozen-structure objective on T4.

    With the hull's combinatorial face structure held fixed, every face
    corner value is a linear function of ``y`` through its stored convex
    combination, so the objective is smooth and convex and sequential
    quadratic programming minimises it to high precision; rebuilding the
    true hull at the new values and repeating while the true objective
    improves walks the solution past the kinks where quasi-Newton
    methods on the nonsmooth objective stall.
    """
    n = len(pts)
    idx, uu, vv = pack_points(pts, ts.T4)

    def sigma_true(yv):
        h = _build_hull(pts, yv, LOGCONCAVE, ts.T4, hull_tol, iters, cache)
        return float(-w @ yv + ig.integrate_exp_hull(h)), h

    y = np.asarray(y_init, float).copy()
    f_cur, hull = sigma_true(y)
    for _ in range(rounds):
        faces = [f for f in hull.faces if f.twice_area > 0.0]
        if not faces:
            break
        areas = np.array([f.twice_area for f in faces])
        corner_ix = []
        corner_co = []
        for f in faces:
            for lam in f.lam:
                items = list(lam.items())
                corner_ix.append(np.array([i for i, _ in items], dtype=int))
                corner_co.append(np.array([c for _, c in items]))

        def fg(z):
            cv = np.array([co @ z[ix]
                           for ix, co in zip(corner_ix, corner_co)])
            cv = cv.reshape(-1, 3)
            val, d1, d2, d3 = ig.exp_triangle_integral_grad(
                areas, cv[:, 0], cv[:, 1], cv[:, 2])
            g = -w.copy()
            dflat = np.stack([d1, d2, d3], axis=1).ravel()
            for dk, ix, co in zip(dflat, corner_ix, corner_co):
                g[ix] += dk * co
            return float(-w @ z + np.sum(val)), g

        rows = []
        bounds = [(None, None)] * n
        for i in range(n):
            row = _face_membership_row(hull, n, int(idx[i]),
                                       float(uu[i]), float(vv[i]))
            if row is None:
                bounds[i] = (y[i], y[i])
                continue
            row[i] -= 1.0
            if np.any(row):
                rows.append(row)
        z, _ = _slsqp_best(fg, y, rows, bounds=bounds)
        f_new, hull_new = sigma_true(z)
        if not np.isfinite(f_new) or f_new >= f_cur - 1e-13 * (1 + abs(f_cur)):
            if f_new < f_cur:
                y, f_cur, hull = z, f_new, hull_new
            break
        y, f_cur, hull = z, f_new, hull_new
    return y


@dataclasses.dataclass
class LogConcaveEstimate:
    """Fitted log-concave maximum likelihood density.

    Attributes
    ----------
    points : list of TreePoint
        Deduplicated sample positions the estimate is anchored at.
    weights : ndarray
        Normalised sample weights (duplicates merged).
    mode : str
        ``"logconcave"`` or ``"bent"``.
    y_star : ndarray
        Optimal log-density values at the sample points.
    hull : ConcavePWL1D or Hull2D
        Least majorant of ``y_star``; its exponential is the density.
    sigma_value : float
        Objective value at the optimum.
    normalization : float
        Exact integral of the fitted density (certificate, should be 1).
    iterations : int
        Number of accepted descent iterations.
    final_step : float
        Euclidean norm of the last accepted update of ``y``.
    converged : bool
    trace : list of float
        Objective value after each accepted iteration (monotone).
    """

    points: list
    weights: np.ndarray
    mode: str
    y_star: np.ndarray
    hull: object
    sigma_value: float
    normalization: float
    iterations: int
    final_step: float
    converged: bool
    trace: list = dataclasses.field(default_factory=list, repr=False)

    @property
    def space(self):
        return self.points[0].space

    def log_density(self, x):
        """Log density at a tree point (-inf outside the support)."""
        return hl.evaluate_hbar(self.hull, x)

    def density(self, x):
        """Density at a tree point (0 outside the support)."""
        val = hl.evaluate_hbar(self.hull, x)
        return math.exp(val) if np.isfinite(val) else 0.0

    def log_density_packed(self, idx, u, v):
        """Vectorised log density at packed positions (see ``pack_points``)."""
        return hl.evaluate_hbar_packed(self.hull, idx, u, v)

    def density_packed(self, idx, u, v):
        vals = hl.evaluate_hbar_packed(self.hull, idx, u, v)
        out = np.zeros_like(vals)
        fin = np.isfinite(vals)
        out[fin] = np.exp(vals[fin])
        return out

    def to_json_dict(self):
        return {
            "space": self.space,
            "mode": self.mode,
            "samples": [p.to_json_dict() for p in self.points],
            "weights": [float(w) for w in self.weights],
            "yStar": [float(t) for t in self.y_star],
            "hull": self.hull.to_json_dict(),
            "sigmaValue": float(self.sigma_value),
            "normalization": float(self.normalization),
            "solver": {
                "iterations": int(self.iterations),
                "finalStep": float(self.final_step),
                "converged": bool(self.converged),
            },
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_json_dict(), **kwargs)

    @classmethod
    def from_json_dict(cls, d):
        space = d["space"]
        points = [ts.TreePoint.from_json_dict(p) for p in d["samples"]]
        if space == ts.T3:
            hull = hl.ConcavePWL1D.from_json_dict(d["hull"])
        else:
            hull = hl.Hull2D.from_json_dict(d["hull"])
        sol = d.get("solver", {})
        return cls(
            points=points,
            weights=np.asarray(d["weights"], dtype=float),
            mode=d["mode"],
            y_star=np.asarray(d["yStar"], dtype=float),
            hull=hull,
            sigma_value=float(d["sigmaValue"]),
            normalization=float(d["normalization"]),
            iterations=int(sol.get("iterations", 0)),
            final_step=float(sol.get("finalStep", 0.0)),
            converged=bool(sol.get("converged", True)),
        )

    @classmethod
    def from_json(cls, s):
        return cls.from_json_dict(json.loads(s))


def fit(points, weights=None, mode=LOGCONCAVE, *, tol_obj=1e-8, tol_step=1e-8,
        max_iter=5000, divergence_guard=50.0, hull_tol=1e-8,
        inner_hull_max_iter=2, final_hull_max_iter=5,
        on_existence_failure="error", init_values=None):
    """Fit the log-concave maximum likelihood density.

    Minimises the convex objective ``sigma`` with a limited-memory
    quasi-Newton method (exact objective and subgradient per evaluation),
    then shifts the optimum so the fitted density integrates to one
    exactly (a pure translation of ``y`` that never increases ``sigma``).

    Parameters
    ----------
    points : list of TreePoint
        Samples; duplicates are merged with summed weights.
    weights : array_like, optional
        Nonnegative weights, normalised to sum to one.
    mode : {"logconcave", "bent"}
        ``"bent"`` restricts to densities whose logarithm is concave
        along every geodesic through the origin with doubled slope change
        allowance; available on the 3-spider only.
    tol_obj, tol_step : float
        Stopping control.  The solver stops when the relative objective
        decrease of a step falls below ``tol_obj``, or earlier when an
        accepted step both decreases the objective by less than
        ``tol_obj`` and moves ``y`` by less than ``tol_step``.
    max_iter : int
        Iteration budget; exceeding it raises ``NonConvergenceError``.
    divergence_guard : float
        Raises ``UnboundedError`` once ``max |y_i|`` exceeds this bound,
        which signals that no maximiser exists.
    inner_hull_max_iter, final_hull_max_iter : int
        Hull refinement depth during the search and for the returned
        estimate (quadrant complex only).
    on_existence_failure : {"error", "warn"}
        Reaction to a failed support check before optimisation.
    init_values : array_like, optional
        Starting log-density values for the merged samples (for warm
        starts); defaults to a kernel pilot estimate.

    Returns
    -------
    LogConcaveEstimate
    """
    space = _space_of(points)
    if mode not in (LOGCONCAVE, BENT):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == BENT and space != ts.T3:
        raise ValueError("bent-concave estimation is available on the "
                         "3-spider only")
    pts, w = merge_duplicates(points, weights)
    n = len(pts)
    if space == ts.T3:
        if n < 2:
            raise ValueError("need at least two distinct sample positions")
    else:
        report = check_existence(pts, hull_tol=hull_tol,
                                 hull_max_iter=final_hull_max_iter)
        if not report.overall:
            if on_existence_failure == "error":
                raise ExistenceViolationError(report)
            warnings.warn("support check failed; the likelihood is expected "
                          "to be unbounded", RuntimeWarning)

    cache = {} if space == ts.T4 else None

    def build(yv, iters):
        return _build_hull(pts, yv, mode, space, hull_tol, iters, cache)

    if init_values is not None:
        y0 = np.array(init_values, float)
        if y0.shape != (n,):
            raise ValueError(
                f"init_values must have length {n} (after merging "
                f"duplicates), got shape {y0.shape}")
    else:
        y0 = _pilot_log_values(pts, w, space)

    state = {"f": math.inf, "x": None, "prev_f": math.inf,
             "step": 0.0, "early": False}
    trace = []

    def fg(yv):
        # far line-search probes may overflow the integral; a non-finite
        # value makes the search backtrack, so only accepted iterates are
        # held against the divergence guard (in ``on_iteration``)
        h = build(yv, inner_hull_max_iter)
        total, gi = ig.integrate_exp_hull_grad(h, n)
        f = float(-w @ yv + total)
        state["f"] = f
        return f, -w + gi

    def on_iteration(xk):
        if float(np.max(np.abs(xk))) > divergence_guard:
            raise UnboundedError(
                "iterates diverged: the likelihood is unbounded and no "
                "maximum likelihood estimate exists")
        f = state["f"]
        trace.append(f)
        if state["x"] is not None:
            state["step"] = float(np.linalg.norm(xk - state["x"]))
            if (state["prev_f"] - f < tol_obj
                    and state["step"] < tol_step):
                state["early"] = True
                raise StopIteration
        state["x"] = xk.copy()
        state["prev_f"] = f

    res = so_minimize(fg, y0, jac=True, method="L-BFGS-B",
                      callback=on_iteration,
                      options=dict(maxiter=max_iter, maxcor=25,
                                   ftol=tol_obj, gtol=1e-12, maxls=60))
    if res.status == 1 and not state["early"]:
        raise NonConvergenceError(
            f"no convergence within {max_iter} iterations "
            f"(last step {state['step']:.3e})")
    y = np.asarray(res.x, float)
    iterations = int(res.nit)
    final_step = state["step"]
    converged = bool(state["early"] or res.status == 0)

    # --- final polish: full-depth hull and exact renormalisation ----------
    hull = build(y, final_hull_max_iter)
    iv = ig.integrate_exp_hull(hull)
    if iv > 0.0 and np.isfinite(iv):
        t = -math.log(iv)
        y = y + t
        hl.shift_values(hull, t)
    sig_cur = float(-w @ y + ig.integrate_exp_hull(hull))
    normalization = float(ig.integrate_exp_hull(hull))

    return LogConcaveEstimate(
        points=pts,
        weights=w,
        mode=mode,
        y_star=y,
        hull=hull,
        sigma_value=sig_cur,
        normalization=normalization,
        iterations=iterations,
        final_step=final_step,
        converged=converged,
        trace=trace,
    )
