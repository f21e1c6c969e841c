"""Integration utilities for densities on T3 and T4.

The reference measure is Lebesgue measure on the open orthants (lines
for T3, quadrants for T4); axes and the origin are null sets.

Two kinds of integration are provided:

* exact integrals of ``exp(affine)`` over segments and triangles via
  divided differences of the exponential, used by the maximum
  likelihood objective, with closed-form derivatives in the vertex
  values;
* midpoint-rule grid integration over per-orthant square grids, used
  for normalising constants, integrated squared error, and sampling.

The divided difference ``exp[x_0, ..., x_k]`` is computed with a
centred series when the nodes are clustered (where the recursive
formula cancels catastrophically) and with the recursion on sorted
nodes otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import treespace as ts
from . import _kernels as kn

# default grids (spacing, cutoff radius)
T3_SPACING = 0.01
T3_RADIUS = 10.0
T4_SPACING = 0.02
T4_RADIUS = 8.0

_SERIES_SPAN = 0.5
_SERIES_TERMS = 30


def _dd_exp_series(nodes: np.ndarray) -> np.ndarray:
    """Centred series: exp[x] = e^c * sum_{N>=k} h_{N-k}(x - c) / N!.

    ``h_j`` are the complete homogeneous symmetric polynomials, computed
    through Newton's identity from power sums.  Converges rapidly when
    all nodes lie within ``_SERIES_SPAN`` of each other.
    """
    k = nodes.shape[-1] - 1
    c = np.mean(nodes, axis=-1, keepdims=True)
    t = nodes - c
    flat = t.reshape(-1, t.shape[-1])
    # power sums p_i = sum_m t_m^i, rows i = 1.._SERIES_TERMS
    powers = np.cumprod(
        np.broadcast_to(flat, (_SERIES_TERMS,) + flat.shape), axis=0)
    p = powers.sum(axis=-1)
    h = np.empty((_SERIES_TERMS + 1, flat.shape[0]))
    h[0] = 1.0
    for j in range(1, _SERIES_TERMS + 1):
        h[j] = (p[:j] * h[j - 1::-1]).sum(axis=0) / j
    inv_fact = np.array([1.0 / math.factorial(j + k)
                         for j in range(_SERIES_TERMS + 1)])
    total = inv_fact @ h
    return np.exp(c[..., 0]) * total.reshape(nodes.shape[:-1])


def dd_exp(nodes: np.ndarray) -> np.ndarray:
    """Divided difference of ``exp`` at the given nodes.

    Parameters
    ----------
    nodes : ndarray, shape (..., m)
        Nodes (repeats allowed) along the last axis, 1 <= m <= 5.

    Returns
    -------
    ndarray of shape ``nodes.shape[:-1]``.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    m = nodes.shape[-1]
    if m == 1:
        return np.exp(nodes[..., 0])
    x = np.sort(nodes, axis=-1)
    span = x[..., -1] - x[..., 0]
    close = span < _SERIES_SPAN
    out = np.empty(x.shape[:-1])
    if close.any():
        out[close] = _dd_exp_series(x[close])
    far = ~close
    if far.any():
        xf = x[far]
        lo = dd_exp(xf[..., :-1])
        hi = dd_exp(xf[..., 1:])
        out[far] = (hi - lo) / (xf[..., -1] - xf[..., 0])
    return out


def exp_segment_integral(length, a, b) -> np.ndarray:
    """Integral of exp over a segment with endpoint log-values a, b.

    ``length * exp[a, b]``; broadcasts over array inputs.
    """
    length, a, b = np.broadcast_arrays(
        np.asarray(length, float), np.asarray(a, float), np.asarray(b, float))
    return length * dd_exp(np.stack([a, b], axis=-1))


def exp_segment_integral_grad(length, a, b):
    """Segment integral and its partials in the endpoint values.

    Returns (I, dI/da, dI/db).
    """
    length, a, b = np.broadcast_arrays(
        np.asarray(length, float), np.asarray(a, float), np.asarray(b, float))
    val = length * dd_exp(np.stack([a, b], axis=-1))
    da = length * dd_exp(np.stack([a, a, b], axis=-1))
    db = length * dd_exp(np.stack([a, b, b], axis=-1))
    return val, da, db


def exp_triangle_integral(twice_area, l1, l2, l3) -> np.ndarray:
    """Integral of exp of an affine function over a triangle.

    ``twice_area`` is twice the Euclidean area; ``l1, l2, l3`` the
    log-values at the vertices: the integral equals
    ``2A * exp[l1, l2, l3]``.
    """
    twice_area, l1, l2, l3 = np.broadcast_arrays(
        np.asarray(twice_area, float), np.asarray(l1, float),
        np.asarray(l2, float), np.asarray(l3, float))
    return twice_area * dd_exp(np.stack([l1, l2, l3], axis=-1))


def exp_triangle_integral_grad(twice_area, l1, l2, l3):
    """Triangle integral and its partials in the three vertex values."""
    twice_area, l1, l2, l3 = np.broadcast_arrays(
        np.asarray(twice_area, float), np.asarray(l1, float),
        np.asarray(l2, float), np.asarray(l3, float))
    val = twice_area * dd_exp(np.stack([l1, l2, l3], axis=-1))
    d1 = twice_area * dd_exp(np.stack([l1, l1, l2, l3], axis=-1))
    d2 = twice_area * dd_exp(np.stack([l1, l2, l2, l3], axis=-1))
    d3 = twice_area * dd_exp(np.stack([l1, l2, l3, l3], axis=-1))
    return val, d1, d2, d3


# ---------------------------------------------------------------------------
# Midpoint-rule grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """A midpoint-rule grid over the orthants of T3 or T4.

    Cell midpoints are stored packed: ``idx`` holds the orthant index,
    ``u``/``v`` the coordinates (``v`` unused for T3); ``weight`` is the
    cell measure (spacing for T3, spacing**2 for T4).
    """

    space: str
    spacing: float
    radius: float
    idx: np.ndarray
    u: np.ndarray
    v: np.ndarray
    weight: float

    def __len__(self) -> int:
        return len(self.idx)

    def integrate(self, values: np.ndarray) -> float:
        """Midpoint-rule integral of per-cell values."""
        return float(self.weight * np.sum(values))


def make_grid(space: str, spacing: Optional[float] = None,
              radius: Optional[float] = None) -> Grid:
    """Build the default midpoint grid for a space.

    T3 grids cover ``(0, radius]`` on each of the three branches; T4
    grids cover the square ``(0, radius]^2`` in each of the 15 quadrants.
    """
    if space == ts.T3:
        spacing = T3_SPACING if spacing is None else float(spacing)
        radius = T3_RADIUS if radius is None else float(radius)
        m = int(round(radius / spacing))
        mids = (np.arange(m) + 0.5) * spacing
        idx = np.repeat(np.arange(3, dtype=np.int64), m)
        u = np.tile(mids, 3)
        return Grid(space, spacing, radius, idx, u, np.zeros_like(u), spacing)
    if space == ts.T4:
        spacing = T4_SPACING if spacing is None else float(spacing)
        radius = T4_RADIUS if radius is None else float(radius)
        m = int(round(radius / spacing))
        mids = (np.arange(m) + 0.5) * spacing
        uu, vv = np.meshgrid(mids, mids, indexing="ij")
        uu = uu.ravel()
        vv = vv.ravel()
        idx = np.repeat(np.arange(15, dtype=np.int64), m * m)
        return Grid(space, spacing, radius, idx, np.tile(uu, 15),
                    np.tile(vv, 15), spacing * spacing)
    raise ValueError(f"unknown space {space!r}")


def grid_integrate(fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
                   grid: Grid) -> float:
    """Integrate a function given packed grid arrays.

    ``fn(idx, u, v)`` must return per-cell values.
    """
    return grid.integrate(fn(grid.idx, grid.u, grid.v))


def ise(values_f: np.ndarray, values_g: np.ndarray, grid: Grid) -> float:
    """Integrated squared error between two densities on a grid."""
    diff = np.asarray(values_f) - np.asarray(values_g)
    return grid.integrate(diff * diff)


def grid_values_to_csv(path: str, grid: Grid, values: np.ndarray) -> None:
    """Write ``orthant,u,v,value`` rows (``v`` empty for T3)."""
    with open(path, "w") as fh:
        fh.write("orthant,u,v,value\n")
        if grid.space == ts.T3:
            for i in range(len(grid)):
                fh.write(f"{grid.idx[i]},{grid.u[i]:.10g},,{values[i]:.10g}\n")
        else:
            for i in range(len(grid)):
                e = ts.T4_EDGES[grid.idx[i]]
                fh.write(f"{e[0]}-{e[1]},{grid.u[i]:.10g},{grid.v[i]:.10g},"
                         f"{values[i]:.10g}\n")


def grid_distances(grid: Grid, p: ts.TreePoint) -> np.ndarray:
    """Distances from one point to every grid midpoint."""
    return kn.point_to_points(p, grid.idx, grid.u, grid.v)


def one_sided_derivative(g: Callable[[float], float],
                         steps: Sequence[float] = (1e-3, 5e-4, 2.5e-4)) -> float:
    """Right derivative of ``g`` at 0 by Richardson extrapolation.

    ``g(0)`` must be finite; the three one-sided difference quotients at
    geometrically shrinking steps are extrapolated twice, eliminating
    the O(h) and O(h^2) error terms.
    """
    g0 = g(0.0)
    q = [(g(h) - g0) / h for h in steps]
    r = steps[0] / steps[1]
    lvl1 = [(r * q[i + 1] - q[i]) / (r - 1) for i in range(len(q) - 1)]
    r2 = r * r
    return (r2 * lvl1[1] - lvl1[0]) / (r2 - 1)


# ---------------------------------------------------------------------------
# Exact integrals of exp(hull) over piecewise-linear majorants
# ---------------------------------------------------------------------------

def integrate_exp_hull_1d(hull) -> float:
    """Exact integral of ``exp`` of a 1D piecewise-linear majorant."""
    total = 0.0
    for br in hull.branches.values():
        if len(br.pos) < 2:
            continue
        seg = np.diff(br.pos)
        total += float(np.sum(exp_segment_integral(
            seg, br.val[:-1], br.val[1:])))
    return total


def integrate_exp_hull_1d_grad(hull, n: int):
    """Integral of ``exp(hull)`` and its gradient in the sample values.

    Each hull vertex carries convex coefficients over the sample values
    that generated it; the chain rule routes the per-vertex partial
    derivatives of the exact segment integrals back to the samples.
    """
    total = 0.0
    grad = np.zeros(n)
    for br in hull.branches.values():
        if len(br.pos) < 2:
            continue
        seg = np.diff(br.pos)
        val, da, db = exp_segment_integral_grad(seg, br.val[:-1], br.val[1:])
        total += float(np.sum(val))
        for k in range(len(seg)):
            for i, c in br.lams[k].items():
                grad[i] += da[k] * c
            for i, c in br.lams[k + 1].items():
                grad[i] += db[k] * c
    return total, grad


def integrate_exp_hull_2d(hull) -> float:
    """Exact integral of ``exp`` of a 2D majorant over its faces."""
    faces = [f for f in hull.faces if f.twice_area > 0.0]
    if not faces:
        return 0.0
    areas = np.array([f.twice_area for f in faces])
    vals = np.array([f.val for f in faces])
    return float(np.sum(exp_triangle_integral(
        areas, vals[:, 0], vals[:, 1], vals[:, 2])))


def integrate_exp_hull_2d_grad(hull, n: int):
    """2D analogue of :func:`integrate_exp_hull_1d_grad` (over faces)."""
    grad = np.zeros(n)
    faces = [f for f in hull.faces if f.twice_area > 0.0]
    if not faces:
        return 0.0, grad
    areas = np.array([f.twice_area for f in faces])
    vals = np.array([f.val for f in faces])
    val, d1, d2, d3 = exp_triangle_integral_grad(
        areas, vals[:, 0], vals[:, 1], vals[:, 2])
    for fi, f in enumerate(faces):
        for dk, lam in zip((d1[fi], d2[fi], d3[fi]), f.lam):
            for i, c in lam.items():
                grad[i] += float(dk) * c
    return float(np.sum(val)), grad


def integrate_exp_hull(hull) -> float:
    """Dispatch on the hull's space (T3 chains or T4 faces)."""
    if hull.space == ts.T3:
        return integrate_exp_hull_1d(hull)
    return integrate_exp_hull_2d(hull)


def integrate_exp_hull_grad(hull, n: int):
    """Dispatching version of the hull integral with gradient."""
    if hull.space == ts.T3:
        return integrate_exp_hull_1d_grad(hull, n)
    return integrate_exp_hull_2d_grad(hull, n)
