"""Closed-form reference densities, samplers and a kernel density baseline.

Provides the densities used throughout the estimation experiments:

* ``case1``/``case2`` — one-dimensional normal-like and exponential-like
  densities on T3 centred at the unit point of branch 1,
* ``case3``/``case4`` — truncated standard-normal densities on T4,
  supported on all fifteen quadrants and on a six-quadrant cycle
  respectively,
* ``case5`` — the one-dimensional density induced by Brownian motion
  started one unit along branch 1 (bent at the origin, not log-concave),
* ``case6`` — the coalescent internal-edge-length density for a
  three-taxon species tree (bent at the origin, not log-concave),
* ``g1``/``g2`` — two-dimensional normal-like densities with different
  means and variances, and mixtures thereof.

Claims implemented here and verified in the test-suite:

* every reference density integrates to one on the default grid within
  1e-3 after numeric normalization;
* case 5 has normalizer exactly one (telescoping normal CDFs) and
  case 6's three branch values agree exactly at the origin;
* the branch-wise exterior derivatives of cases 5 and 6 satisfy the
  zero-sum balance condition at the origin, with case-6 values
  -(2/3)e^{-T} on branch 1 and +(1/3)e^{-T} on branches 2 and 3 before
  normalization;
* the coalescent topology weights are (1-(2/3)e^{-T}, e^{-T}/3,
  e^{-T}/3) and the joint topology/length density integrates to one;
* samplers are deterministic given a seed and agree with their density
  in distribution (chi-square goodness of fit);
* the kernel density estimator integrates to one on the grid by
  construction and reduces to the Euclidean Gaussian KDE deep inside a
  single orthant.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from . import _kernels as kn
from . import integrate as ig
from . import treespace as ts

__all__ = [
    "ReferenceDensity",
    "KdeModel",
    "reference_density",
    "mixture",
    "CASE4_ORTHANTS",
    "coalescent_topology_weights",
    "coalescent_density",
    "exterior_derivative",
    "kirchhoff_sum",
    "kde_fit",
    "kde_eval",
]

#: The six T4 quadrants carrying the case-4 density (a closed cycle in
#: the quadrant adjacency graph).
CASE4_ORTHANTS: Tuple[Tuple[int, int], ...] = (
    (0, 1), (1, 6), (6, 8), (3, 8), (3, 4), (0, 4))

_CASE4_IDX = np.array(sorted(ts.T4_EDGE_INDEX[e] for e in CASE4_ORTHANTS))
_CASE4_AXES = frozenset(a for e in CASE4_ORTHANTS for a in e)

_T3_KINDS = ("case1", "case2", "case5", "case6")
_T4_KINDS = ("case3", "case4", "g1", "g2")

#: Sampler grid spacing per space (finer than the integration default).
_SAMPLE_SPACING = {ts.T3: 0.005, ts.T4: 0.01}

_GRID_CACHE: Dict[tuple, ig.Grid] = {}


def _shared_grid(space: str, spacing: Optional[float] = None) -> ig.Grid:
    """Memoised default grids (they are large and read-only)."""
    key = (space, spacing)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = ig.make_grid(space, spacing=spacing)
    return _GRID_CACHE[key]


def _phi(x, mean: float, var: float):
    return norm.pdf(x, loc=mean, scale=math.sqrt(var))


class ReferenceDensity:
    """A normalized reference density on T3 or T4.

    Instances are built by :func:`reference_density` or :func:`mixture`.
    The normalizer of the closed-form (unnormalized) expression is
    computed once on the default integration grid and cached; mixtures
    of normalized components have normalizer one by construction.
    """

    def __init__(self, kind: str, space: str, params: Dict[str, float],
                 components: Optional[List[Tuple[float,
                                                 "ReferenceDensity"]]] = None):
        self.kind = kind
        self.space = space
        self.params = dict(params)
        self.components = components
        self._normalizer: Optional[float] = None
        self._sampler_cdf: Optional[np.ndarray] = None
        self._sampler_grid: Optional[ig.Grid] = None

    # -- evaluation ---------------------------------------------------------
    @property
    def normalizer(self) -> float:
        """Integral of the unnormalized form over the default grid."""
        if self._normalizer is None:
            if self.components is not None:
                self._normalizer = 1.0
            else:
                grid = _shared_grid(self.space)
                vals = self._unnormalized_packed(grid.idx, grid.u, grid.v)
                self._normalizer = grid.integrate(vals)
        return self._normalizer

    def density(self, x: ts.TreePoint) -> float:
        """Normalized density at a tree point."""
        if x.space != self.space:
            raise ValueError(
                f"point in {x.space} evaluated under a {self.space} density")
        if self.components is not None:
            return sum(w * c.density(x) for w, c in self.components)
        idx, u, v = kn.pack_points([x], self.space)
        return float(self._unnormalized_packed(idx, u, v)[0] /
                     self.normalizer)

    def density_packed(self, idx: np.ndarray, u: np.ndarray,
                       v: np.ndarray) -> np.ndarray:
        """Vectorized normalized density on packed point arrays."""
        if self.components is not None:
            out = np.zeros(len(idx))
            for w, c in self.components:
                out += w * c.density_packed(idx, u, v)
            return out
        return self._unnormalized_packed(idx, u, v) / self.normalizer

    def _unnormalized_packed(self, idx, u, v) -> np.ndarray:
        idx = np.asarray(idx)
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        kind = self.kind
        if kind == "case1":
            d = kn.point_to_points(self._centre(), idx, u, v)
            return np.exp(-0.5 * d * d)
        if kind == "case2":
            d = kn.point_to_points(self._centre(), idx, u, v)
            support = (idx == 1) | (idx == 2) | (idx == -1) | \
                ((idx == 0) & (u < 1.0))
            return np.where(support, np.exp(-d), 0.0)
        if kind == "case3":
            return np.exp(-0.5 * (u * u + v * v))
        if kind == "case4":
            mask = self._case4_mask(idx, u, v)
            return np.where(mask, np.exp(-0.5 * (u * u + v * v)), 0.0)
        if kind == "case5":
            x0, tvar = self.params["x0"], self.params["t"]
            side = _phi(u, -x0, tvar)
            out = np.where(idx == 0, _phi(u, x0, tvar) - side / 3.0,
                           2.0 * side / 3.0)
            return out
        if kind == "case6":
            T = self.params["T"]
            branch1 = (-np.exp(-u - T) / 6.0 +
                       0.5 * np.exp(-u + T - 2.0 * np.maximum(0.0, T - u)))
            rest = np.exp(-u - T) / 3.0
            return np.where(idx == 0, branch1, rest)
        if kind == "g1":
            d = kn.point_to_points(self._centre(), idx, u, v)
            return np.exp(-0.5 * d * d)
        if kind == "g2":
            d = kn.point_to_points(self._centre(), idx, u, v)
            return np.exp(-2.0 * d * d)
        raise ValueError(f"unknown reference density kind {kind!r}")

    def _centre(self) -> ts.TreePoint:
        if self.kind in ("case1", "case2"):
            return ts.tree_point(ts.T3, 0, (self.params["x0"],))
        if self.kind == "g1":
            return ts.tree_point(ts.T4, (0, 1), (1.0, 1.0))
        if self.kind == "g2":
            return ts.tree_point(ts.T4, (2, 3), (1.0, 1.0))
        raise ValueError(self.kind)

    @staticmethod
    def _case4_mask(idx, u, v) -> np.ndarray:
        # packed points on an axis carry their home quadrant index, so
        # membership must be decided by the axis when a coordinate is 0
        in_cycle = np.isin(idx, _CASE4_IDX)
        e0 = np.array([e[0] for e in ts.T4_EDGES])
        e1 = np.array([e[1] for e in ts.T4_EDGES])
        axis_ok0 = np.isin(e0, tuple(_CASE4_AXES))
        axis_ok1 = np.isin(e1, tuple(_CASE4_AXES))
        safe = np.clip(idx, 0, 14)
        on_axis0 = (v == 0.0) & axis_ok0[safe]
        on_axis1 = (u == 0.0) & axis_ok1[safe]
        return (idx == -1) | in_cycle | on_axis0 | on_axis1

    # -- sampling -----------------------------------------------------------
    def sample(self, n: int, seed: int) -> List[ts.TreePoint]:
        """Draw ``n`` points by grid inverse transform, deterministically.

        A fine midpoint grid carries the density's cell masses; cells
        are drawn from the normalized cumulative masses and the point is
        then placed uniformly inside the chosen cell.
        """
        if n < 1:
            raise ValueError("need n >= 1")
        rng = np.random.default_rng(seed)
        if self.components is not None:
            weights = np.array([w for w, _ in self.components])
            counts = rng.multinomial(n, weights / weights.sum())
            out: List[ts.TreePoint] = []
            for (w, comp), k in zip(self.components, counts):
                if k:
                    out.extend(comp.sample(int(k),
                                           int(rng.integers(2 ** 31))))
            rng.shuffle(out)
            return out
        if self._sampler_cdf is None:
            grid = _shared_grid(self.space,
                                spacing=_SAMPLE_SPACING[self.space])
            masses = self._unnormalized_packed(grid.idx, grid.u, grid.v)
            cum = np.cumsum(masses)
            if cum[-1] <= 0:
                raise ValueError("density has no mass on the sampler grid")
            self._sampler_cdf = cum / cum[-1]
            self._sampler_grid = grid
        grid = self._sampler_grid
        cells = np.searchsorted(self._sampler_cdf, rng.random(n))
        half = 0.5 * grid.spacing
        us = grid.u[cells] + rng.uniform(-half, half, size=n)
        out = []
        if self.space == ts.T3:
            for c, uu in zip(cells, us):
                out.append(ts.tree_point(ts.T3, int(grid.idx[c]),
                                         (max(uu, 0.0),)))
        else:
            vs = grid.v[cells] + rng.uniform(-half, half, size=n)
            for c, uu, vv in zip(cells, us, vs):
                out.append(ts.tree_point(
                    ts.T4, ts.T4_EDGES[int(grid.idx[c])],
                    (max(uu, 0.0), max(vv, 0.0))))
        return out

    def sample_to_jsonl(self, path: str, n: int, seed: int) -> None:
        """Write a header record plus one sampled TreePoint per line."""
        pts = self.sample(n, seed)
        with open(path, "w") as fh:
            header = {"kind": self.kind, "params": self.params,
                      "n": n, "seed": seed}
            if self.components is not None:
                header["components"] = [
                    {"weight": w, "kind": c.kind, "params": c.params}
                    for w, c in self.components]
            fh.write(json.dumps({"header": header}) + "\n")
            for p in pts:
                fh.write(p.to_json() + "\n")


def reference_density(kind: str, **params) -> ReferenceDensity:
    """Build a closed-form reference density by name.

    Recognized kinds: ``case1`` … ``case6``, ``g1``, ``g2``.  Optional
    parameters: ``x0`` (cases 1, 2, 5; default 1.0), ``t`` (case 5
    variance, default 5.0) and ``T`` (case 6 edge length, default 1.0).
    """
    kind = kind.lower()
    if kind in _T3_KINDS:
        space = ts.T3
    elif kind in _T4_KINDS:
        space = ts.T4
    else:
        raise ValueError(f"unknown reference density kind {kind!r}")
    defaults: Dict[str, float] = {}
    if kind in ("case1", "case2"):
        defaults["x0"] = float(params.pop("x0", 1.0))
    elif kind == "case5":
        defaults["x0"] = float(params.pop("x0", 1.0))
        defaults["t"] = float(params.pop("t", 5.0))
    elif kind == "case6":
        defaults["T"] = float(params.pop("T", 1.0))
        if defaults["T"] <= 0:
            raise ValueError("case6 requires T > 0")
    if params:
        raise ValueError(f"unexpected parameters for {kind}: {params}")
    return ReferenceDensity(kind, space, defaults)


def mixture(components: Sequence[Tuple[float, ReferenceDensity]]
            ) -> ReferenceDensity:
    """Convex mixture of normalized reference densities."""
    comps = [(float(w), c) for w, c in components]
    if not comps:
        raise ValueError("empty mixture")
    total = sum(w for w, _ in comps)
    if total <= 0:
        raise ValueError("mixture weights must have positive sum")
    space = comps[0][1].space
    if any(c.space != space for _, c in comps):
        raise ValueError("mixture components live in different spaces")
    comps = [(w / total, c) for w, c in comps]
    kind = "mixture(" + "+".join(c.kind for _, c in comps) + ")"
    return ReferenceDensity(kind, space, {}, components=comps)


# ---------------------------------------------------------------------------
# Coalescent internal-edge-length density (three taxa, species tree with
# internal edge length T)
# ---------------------------------------------------------------------------

def coalescent_topology_weights(T: float) -> Tuple[float, float, float]:
    """Probabilities of the three gene-tree topologies.

    The topology matching the species tree keeps the two closest taxa
    together unless both lineages fail to coalesce inside the internal
    edge (probability e^{-T}), in which case all three topologies of the
    remaining exchangeable lineages are equally likely.
    """
    if T <= 0:
        raise ValueError("need T > 0")
    e = math.exp(-T)
    return 1.0 - 2.0 * e / 3.0, e / 3.0, e / 3.0


def coalescent_density(T: float, topology: int, x) -> Union[float,
                                                            np.ndarray]:
    """Joint density of gene-tree topology and internal edge length.

    ``topology`` is 0 for the species-tree topology (branch 1) and 1 or
    2 for the alternatives.  The value is the joint density, i.e. the
    topology weight times the conditional length density; summing the
    integrals over the three branches gives one.
    """
    if T <= 0:
        raise ValueError("need T > 0")
    if topology not in (0, 1, 2):
        raise ValueError("topology index must be 0, 1 or 2")
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("edge length must be nonnegative")
    if topology == 0:
        val = (-np.exp(-x - T) / 6.0 +
               0.5 * np.exp(-x + T - 2.0 * np.maximum(0.0, T - x)))
    else:
        val = np.exp(-x - T) / 3.0
    return float(val) if val.ndim == 0 else val


# ---------------------------------------------------------------------------
# Exterior derivatives at the origin of T3
# ---------------------------------------------------------------------------

def exterior_derivative(f: Union[ReferenceDensity,
                                 Callable[[ts.TreePoint], float]],
                        branch: int) -> float:
    """Outward decay rate of a T3 density at the origin along a branch.

    Computes lim_{h -> 0+} (f(0) - f_branch(h)) / h by Richardson
    extrapolation of one-sided difference quotients.
    """
    if branch not in (0, 1, 2):
        raise ValueError("T3 branch index must be 0, 1 or 2")
    ev = f.density if isinstance(f, ReferenceDensity) else f

    def g(h: float) -> float:
        p = ts.tree_point(ts.T3, branch, (h,)) if h > 0 else ts.origin(ts.T3)
        return ev(p)

    return -ig.one_sided_derivative(g)


def kirchhoff_sum(f: Union[ReferenceDensity,
                           Callable[[ts.TreePoint], float]]) -> float:
    """Sum of the three branch exterior derivatives at the origin."""
    return sum(exterior_derivative(f, b) for b in range(3))


# ---------------------------------------------------------------------------
# Kernel density estimation baseline
# ---------------------------------------------------------------------------

def _reachable_orthants(p: ts.TreePoint,
                        cutoff: float) -> Optional[np.ndarray]:
    """Boolean mask over orthants that can hold points within ``cutoff``.

    For a point in an orthant sharing no axis with an orthant containing
    ``p``, the unfolded angle to ``p`` exceeds a right angle, so the
    geodesic distance is at least ``sqrt(r_p^2 + r_x^2) >= r_p``.  When
    ``p`` sits farther than ``cutoff`` from the origin such orthants are
    therefore out of reach.  Returns ``None`` when no orthant can be
    excluded.
    """
    if p.norm() <= cutoff:
        return None
    own = ts.orthants_containing(p)
    if p.space == ts.T3:
        keep = np.zeros(3, dtype=bool)
        keep[list(own)] = True
        return keep
    keep = np.zeros(15, dtype=bool)
    for o in own:
        for axis in ts.T4_EDGES[o]:
            keep[list(ts.T4_AXIS_ORTHANTS[axis])] = True
    return keep


class KdeModel:
    """Gaussian kernel density estimate in geodesic distance.

    The estimate is ``n^{-1} sum_i c_i exp(-d(x, X_i)^2 / (2 h^2))``
    where each per-point constant ``c_i`` makes that kernel integrate to
    one over the tree-space grid, so the whole estimate integrates to
    one by construction.
    """

    def __init__(self, points: List[ts.TreePoint], bandwidth: float,
                 constants: np.ndarray):
        self.points = list(points)
        self.bandwidth = float(bandwidth)
        self.constants = np.asarray(constants, float)
        self.space = points[0].space

    def density(self, x: ts.TreePoint) -> float:
        idx, u, v = kn.pack_points([x], self.space)
        return float(self.density_packed(idx, u, v)[0])

    def density_packed(self, idx: np.ndarray, u: np.ndarray,
                       v: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        out = np.zeros(len(idx))
        h2 = 2.0 * self.bandwidth * self.bandwidth
        r = np.hypot(u, v)
        cutoff = self.bandwidth * 7.0
        for p, c in zip(self.points, self.constants):
            # reverse triangle inequality in the origin distance screens
            # out cells the kernel cannot reach
            near = np.abs(r - p.norm()) <= cutoff
            keep = _reachable_orthants(p, cutoff)
            if keep is not None:
                near &= keep[np.clip(idx, 0, len(keep) - 1)]
            if not near.any():
                continue
            d = kn.point_to_points(p, idx[near], u[near], v[near])
            out[near] += c * np.exp(-d * d / h2)
        return out / len(self.points)

    def to_json_dict(self) -> dict:
        return {"space": self.space,
                "bandwidth": self.bandwidth,
                "samples": [p.to_json_dict() for p in self.points],
                "constants": [float(c) for c in self.constants]}

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)

    @staticmethod
    def from_json_dict(d: dict) -> "KdeModel":
        pts = [ts.TreePoint.from_json_dict(p) for p in d["samples"]]
        return KdeModel(pts, d["bandwidth"], np.asarray(d["constants"]))

    @staticmethod
    def from_json(text: str) -> "KdeModel":
        return KdeModel.from_json_dict(json.loads(text))


def kde_fit(points: Sequence[ts.TreePoint],
            bandwidth: Optional[float] = None,
            grid: Optional[ig.Grid] = None) -> KdeModel:
    """Fit the kernel density baseline.

    The default bandwidth is ``1.06 * sigma * n^(-1/(4+dim))`` with
    ``sigma`` the root mean squared distance to the Fréchet mean of the
    sample.  The per-kernel normalizing constants come from a quadrature
    grid; the default uses a spacing of 0.04 on the planar space, which
    keeps the midpoint-rule error on a kernel mass below roughly
    ``(spacing / bandwidth)^2 / 24`` relative.
    """
    points = list(points)
    n = len(points)
    if n < 2:
        raise ValueError("kernel density estimation needs at least 2 points")
    space = points[0].space
    if any(p.space != space for p in points):
        raise ValueError("mixed spaces in sample")
    if grid is None:
        grid = ig.make_grid(space) if space == ts.T3 else \
            ig.make_grid(space, spacing=0.04)
    if bandwidth is None:
        from .clustering import frechet_mean
        centre = frechet_mean(points)
        d = kn.point_to_points(centre, *kn.pack_points(points, space))
        sigma = math.sqrt(float(np.mean(d * d)))
        dim = 1 if space == ts.T3 else 2
        bandwidth = 1.06 * sigma * n ** (-1.0 / (4 + dim))
        if bandwidth <= 0:
            bandwidth = 0.1
    h2 = 2.0 * bandwidth * bandwidth
    r = np.hypot(grid.u, grid.v)
    cutoff = bandwidth * 7.0
    constants = np.empty(n)
    for i, p in enumerate(points):
        near = np.abs(r - p.norm()) <= cutoff
        keep = _reachable_orthants(p, cutoff)
        if keep is not None:
            near &= keep[np.clip(grid.idx, 0, len(keep) - 1)]
        d = kn.point_to_points(p, grid.idx[near], grid.u[near], grid.v[near])
        mass = grid.weight * float(np.exp(-d * d / h2).sum())
        constants[i] = 1.0 / mass if mass > 0 else 0.0
    return KdeModel(points, bandwidth, constants)


def kde_eval(model: KdeModel, x: ts.TreePoint) -> float:
    """Evaluate a fitted kernel density estimate at a point."""
    return model.density(x)
