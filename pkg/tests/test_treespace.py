"""Tests for the T3/T4 geometry layer.

Core claims
-----------
* The T4 gluing tables realise the Petersen graph (15 orthants, 10
  axes, every axis on the boundary of exactly 3 orthants).
* Points canonicalise: boundary points land in the lexicographically
  smallest orthant, zero points collapse to the origin, and JSON
  round-trips are exact.
* Geodesics match hand-computed unfoldings (adjacent quadrants, a
  three-quadrant diagonal) and degenerate to cone paths for orthant
  pairs with no common neighbour.
* The metric satisfies symmetry, the triangle inequality, the CAT(0)
  midpoint contraction, and arc-length parametrisation, at 1e-10 on
  seeded random points including boundary points and the origin.
* The batch distance kernels agree exactly with the scalar routine.
"""

import json
import math

import numpy as np
import pytest

from lctree import _kernels as kn
from lctree import treespace as ts


def random_t4_point(rng):
    r = rng.random()
    if r < 0.05:
        return ts.origin("T4")
    if r < 0.20:
        return ts.axis_point(int(rng.integers(10)), float(rng.uniform(0.01, 3)))
    edge = ts.T4_EDGES[rng.integers(15)]
    return ts.tree_point("T4", edge, rng.uniform(0.001, 3.0, 2))


def random_t3_point(rng):
    r = rng.random()
    if r < 0.08:
        return ts.origin("T3")
    return ts.tree_point("T3", int(rng.integers(3)), [float(rng.uniform(0.01, 3))])


class TestPetersenTables:
    def test_fifteen_edges_ten_axes(self):
        topo = ts.petersen_topology()
        assert len(topo["orthants"]) == 15
        assert topo["axes"] == list(range(10))
        assert sorted(map(tuple, topo["orthants"])) == list(map(tuple, ts.T4_EDGES))

    def test_three_regular(self):
        for axis in range(10):
            incident = [e for e in ts.T4_EDGES if axis in e]
            assert len(incident) == 3
            assert ts.T4_AXIS_ORTHANTS[axis] == tuple(
                ts.T4_EDGE_INDEX[e] for e in incident
            )

    def test_no_multi_edges(self):
        # two orthants share at most one boundary axis
        for i, a in enumerate(ts.T4_EDGES):
            for b in ts.T4_EDGES[i + 1:]:
                assert len(set(a) & set(b)) <= 1

    def test_six_cycle_through_spokes(self):
        # the labelling contains this closed 6-cycle of quadrants, used
        # by the reference densities with one-dimensional support
        cycle = [(0, 1), (1, 6), (6, 8), (3, 8), (3, 4), (0, 4)]
        for i, e in enumerate(cycle):
            nxt = cycle[(i + 1) % 6]
            assert len(set(e) & set(nxt)) == 1


class TestCanonicalForm:
    def test_boundary_moves_to_smallest_orthant(self):
        p = ts.tree_point("T4", (6, 9), [0.0, 2.0])  # on axis 9
        assert p.orthant == (4, 9)                   # orthants on axis 9: {4,9},{6,9},{7,9}
        assert p.coords == (0.0, 2.0)

    def test_unsorted_pair_is_sorted(self):
        p = ts.tree_point("T4", (4, 0), [2.0, 1.0])
        assert p.orthant == (0, 4)
        assert p.coords == (1.0, 2.0)

    def test_zero_collapses_to_origin(self):
        assert ts.tree_point("T4", (0, 1), [0.0, 0.0]).is_origin
        assert ts.tree_point("T3", 2, [0.0]).is_origin

    def test_rejects_bad_data(self):
        with pytest.raises(ValueError):
            ts.tree_point("T4", (0, 2), [1.0, 1.0])   # not a Petersen edge
        with pytest.raises(ValueError):
            ts.tree_point("T4", (0, 1), [-1.0, 1.0])
        with pytest.raises(ValueError):
            ts.tree_point("T3", 3, [1.0])
        with pytest.raises(ValueError):
            ts.tree_point("T2", 0, [1.0])

    def test_axis_point_containment(self):
        p = ts.axis_point(7, 1.5)
        containing = ts.orthants_containing(p)
        assert sorted(containing) == sorted(ts.T4_AXIS_ORTHANTS[7])
        for o in containing:
            u, v = ts.coords_in_orthant(p, o)
            assert sorted([u, v]) == [0.0, 1.5]

    def test_json_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = random_t4_point(rng)
            q = ts.TreePoint.from_json_dict(json.loads(json.dumps(p.to_json_dict())))
            assert q == p
        for _ in range(50):
            p = random_t3_point(rng)
            q = ts.TreePoint.from_json_dict(json.loads(json.dumps(p.to_json_dict())))
            assert q == p


class TestT3Geodesics:
    def test_cross_branch_distance(self):
        p = ts.tree_point("T3", 0, [1.0])
        q = ts.tree_point("T3", 1, [2.0])
        assert ts.distance(p, q) == 3.0
        g = ts.geodesic(p, q)
        assert g.kind == "ConePath"
        assert g.breakpoints[0].is_origin
        assert g.fractions[0] == pytest.approx(1.0 / 3.0)

    def test_same_branch(self):
        p = ts.tree_point("T3", 2, [0.5])
        q = ts.tree_point("T3", 2, [2.5])
        assert ts.distance(p, q) == 2.0
        assert ts.geodesic(p, q).kind == "SameOrthant"

    def test_point_on_geodesic(self):
        p = ts.tree_point("T3", 0, [1.0])
        q = ts.tree_point("T3", 1, [2.0])
        assert ts.point_on_geodesic(p, q, 1.0 / 3.0).is_origin
        x = ts.point_on_geodesic(p, q, 0.5)
        assert x.orthant == 1 and x.coords[0] == pytest.approx(0.5)

    def test_origin_crossing_fraction(self):
        p = ts.tree_point("T3", 0, [3.0])
        q = ts.tree_point("T3", 2, [1.0])
        assert ts.origin_crossing_fraction(p, q) == pytest.approx(0.75)
        assert ts.origin_crossing_fraction(p, ts.tree_point("T3", 0, [1.0])) is None


class TestT4Geodesics:
    def test_adjacent_quadrants_unfold(self):
        a = ts.tree_point("T4", (0, 1), [1.0, 1.0])
        b = ts.tree_point("T4", (1, 2), [1.0, 1.0])
        g = ts.geodesic(a, b)
        assert g.kind == "Unfolded"
        assert g.length == pytest.approx(2.0, abs=1e-12)
        bp = g.breakpoints[0]
        assert ts.coords_in_orthant(bp, ts.T4_EDGE_INDEX[(0, 1)]) == (0.0, 1.0)
        assert g.fractions[0] == pytest.approx(0.5)
        mid = ts.point_on_geodesic(a, b, 0.5)
        assert mid == bp

    def test_three_quadrant_diagonal(self):
        # straight segment crossing axes 0 then 1; length 1.2 * sqrt(2)
        a = ts.tree_point("T4", (0, 5), [1.0, 0.2])
        b = ts.tree_point("T4", (1, 6), [1.0, 0.2])
        g = ts.geodesic(a, b)
        assert g.kind == "Unfolded"
        assert g.length == pytest.approx(1.2 * math.sqrt(2), abs=1e-12)
        assert len(g.breakpoints) == 2
        r0 = g.breakpoints[0].norm()
        r1 = g.breakpoints[1].norm()
        assert r0 == pytest.approx(0.8, abs=1e-12)
        assert r1 == pytest.approx(0.8, abs=1e-12)

    def test_far_pair_is_cone_path(self):
        # {0,1} and {3,8} share no axis and no common neighbour axis pair
        a = ts.tree_point("T4", (0, 1), [1.0, 1.0])
        b = ts.tree_point("T4", (3, 8), [1.0, 1.0])
        g = ts.geodesic(a, b)
        assert g.kind == "ConePath"
        assert g.length == pytest.approx(2 * math.sqrt(2), abs=1e-12)
        assert g.breakpoints[0].is_origin
        assert g.fractions[0] == pytest.approx(0.5)

    def test_opposite_quadrants_degenerate(self):
        # {0,1} vs {2,3}: unfolds to exactly 180 degrees, so the cone
        # path through the origin attains the same length
        a = ts.tree_point("T4", (0, 1), [1.0, 1.0])
        b = ts.tree_point("T4", (2, 3), [1.0, 1.0])
        assert ts.distance(a, b) == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_same_orthant(self):
        a = ts.tree_point("T4", (5, 7), [1.0, 2.0])
        b = ts.tree_point("T4", (5, 7), [3.0, 0.5])
        assert ts.distance(a, b) == pytest.approx(math.hypot(2.0, 1.5))
        assert ts.geodesic(a, b).kind == "SameOrthant"

    def test_boundary_point_shared_orthant(self):
        p = ts.axis_point(1, 1.0)             # canonical orthant (0, 1)
        q = ts.tree_point("T4", (1, 6), [2.0, 1.0])
        assert ts.distance(p, q) == pytest.approx(math.hypot(1.0, 1.0))

    def test_origin_distances(self):
        o = ts.origin("T4")
        p = ts.tree_point("T4", (2, 7), [3.0, 4.0])
        assert ts.distance(o, p) == 5.0
        assert ts.point_on_geodesic(o, p, 0.4).norm() == pytest.approx(2.0)


class TestMetricProperties:
    def test_symmetry_triangle_cat0(self):
        rng = np.random.default_rng(123)
        for _ in range(500):
            a, b, c = (random_t4_point(rng) for _ in range(3))
            dab = ts.distance(a, b)
            assert dab == ts.distance(b, a)
            assert ts.distance(a, c) <= dab + ts.distance(b, c) + 1e-10
            m1 = ts.point_on_geodesic(a, b, 0.5)
            m2 = ts.point_on_geodesic(a, c, 0.5)
            assert ts.distance(m1, m2) <= 0.5 * ts.distance(b, c) + 1e-10

    def test_arc_length_parametrisation(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            a, b = random_t4_point(rng), random_t4_point(rng)
            lam = float(rng.random())
            d = ts.distance(a, b)
            x = ts.point_on_geodesic(a, b, lam)
            assert ts.distance(a, x) == pytest.approx(lam * d, abs=1e-10)
            assert ts.distance(x, b) == pytest.approx((1 - lam) * d, abs=1e-10)

    def test_cone_path_upper_bound(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            a, b = random_t4_point(rng), random_t4_point(rng)
            assert ts.distance(a, b) <= a.norm() + b.norm() + 1e-12


class TestKernels:
    def test_t4_batch_matches_scalar(self):
        rng = np.random.default_rng(99)
        pts = [random_t4_point(rng) for _ in range(200)]
        idx, u, v = kn.pack_points(pts, "T4")
        for i in range(0, 200, 23):
            batch = kn.point_to_points(pts[i], idx, u, v)
            ref = np.array([ts.distance(pts[i], q) for q in pts])
            assert np.max(np.abs(batch - ref)) == 0.0

    def test_t3_batch_matches_scalar(self):
        rng = np.random.default_rng(100)
        pts = [random_t3_point(rng) for _ in range(100)]
        idx, u, _ = kn.pack_points(pts, "T3")
        for i in range(0, 100, 11):
            batch = kn.point_to_points(pts[i], idx, u, np.zeros_like(u))
            ref = np.array([ts.distance(pts[i], q) for q in pts])
            assert np.max(np.abs(batch - ref)) == 0.0

    def test_pure_backend_matches_active(self):
        from lctree._kernels import _pure

        rng = np.random.default_rng(3)
        pts = [random_t4_point(rng) for _ in range(150)]
        idx, u, v = kn.pack_points(pts, "T4")
        p = pts[0]
        a = ts.T4_EDGE_INDEX[p.orthant] if not p.is_origin else -1
        pu, pv = p.coords if not p.is_origin else (0.0, 0.0)
        active = kn.t4_point_to_points(a, pu, pv, idx, u, v)
        pure = _pure.t4_point_to_points(a, pu, pv, idx, u, v)
        assert np.array_equal(active, pure)
