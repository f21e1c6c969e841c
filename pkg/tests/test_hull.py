"""Tests for least concave majorants on tree spaces.

Core claims
-----------
* The origin chord rules match hand-derived values: the ordinary chord
  through the origin takes the distance-weighted average of the two
  endpoint values, while the relaxed (bent) rule doubles one side's
  distance and keeps the lower of the two candidates, so the bent
  origin value never exceeds the ordinary one.
* ``concave_hull_1d`` equals an independent chord-closure oracle at
  sample positions, hull vertices and random probes, majorises its
  data, and is concave along every geodesic where required.
* ``hull_2d`` majorises its data on random multi-orthant clouds, agrees
  with a linear-programming evaluation route, and its exact integral
  matches a midpoint-grid integral of the evaluated surface.
* The skeleton's origin interval collects cumulative combination
  certificates, so its upper end (the hull's origin value) never
  decreases and its lower end never increases across refinement
  steps; a far point in a non-adjacent orthant leaves the hull's
  projected area in the occupied orthant unchanged.
* Degenerate inputs (single point, origin only, single orthant) yield
  the documented shortcut hulls, and JSON round-trips preserve both
  evaluation and exact integrals.
"""

import math

import numpy as np
import pytest

from lctree import hull as hl
from lctree import integrate as ig
from lctree import treespace as ts


def rand_cloud(n, n_orth=4, with_axis=True, with_origin=False, seed=None):
    """Random T4 cloud spread over a few orthants, with log-values."""
    r = np.random.default_rng(seed)
    orths = r.choice(15, size=min(n_orth, 15), replace=False)
    pts = []
    for _ in range(n):
        o = int(r.choice(orths))
        u, v = r.uniform(0.05, 2.0, size=2)
        pts.append(ts.tree_point(ts.T4, ts.T4_EDGES[o], (u, v)))
    if with_axis:
        a = int(r.integers(0, 10))
        pts.append(ts.axis_point(a, float(r.uniform(0.2, 1.5))))
    if with_origin:
        pts.append(ts.origin(ts.T4))
    y = r.normal(0.0, 0.8, size=len(pts))
    return pts, y


def t3_cloud(n, seed, with_origin=False, branches=(0, 1, 2)):
    """Random T3 cloud with log-values."""
    r = np.random.default_rng(seed)
    pts = []
    for _ in range(n):
        b = int(r.choice(branches))
        pts.append(ts.tree_point(ts.T3, b, (float(r.uniform(0.05, 3.0)),)))
    if with_origin:
        pts.append(ts.origin(ts.T3))
    y = r.normal(0.0, 1.0, size=len(pts))
    return pts, y


def chord_value(da, ya, db, yb, mode):
    """Origin value of the two-point chord, rederived from scratch.

    The ordinary chord is the straight line between positions ``-da``
    and ``+db``; the bent rule doubles one distance (either side) and
    keeps the smaller of the two resulting origin values.
    """
    if mode == hl.LOGCONCAVE:
        return (db * ya + da * yb) / (da + db)
    return min((2.0 * db * ya + da * yb) / (da + 2.0 * db),
               (db * ya + 2.0 * da * yb) / (2.0 * da + db))


def brute_eval_1d(points, values, mode, x):
    """Chord-closure evaluation of the least majorant on T3.

    Every value of the least (bent-)concave majorant is forced by a
    finite chain of chord constraints: pairwise chords through the
    origin fix the best origin value, and one more chord from that
    anchor reaches any position on an occupied branch.  Taking the
    maximum over all such chords therefore reproduces the hull exactly,
    without reusing the envelope construction under test.
    """
    rows = []
    has_anchor = False
    for p, y in zip(points, values):
        if p.is_origin:
            rows.append((-1, 0.0, float(y)))
        else:
            rows.append((p.orthant, float(p.coords[0]), float(y)))
    occupied = sorted({b for b, t, _ in rows if b >= 0})
    has_anchor = len(occupied) >= 2 or any(b == -1 for b, _, _ in rows)
    v0 = -math.inf
    for b, t, y in rows:
        if b == -1:
            v0 = max(v0, y)
    for i, (bi, ti, yi) in enumerate(rows):
        for bj, tj, yj in rows[i + 1:]:
            if bi == -1 or bj == -1 or bi == bj:
                continue
            v0 = max(v0, chord_value(ti, yi, tj, yj, mode))
    if x.is_origin:
        return v0 if has_anchor else -math.inf
    b, t = x.orthant, float(x.coords[0])
    if b not in occupied:
        return -math.inf
    cands = [y for bb, tt, y in rows if bb == b and tt == t]
    if has_anchor:
        for bj, tj, yj in rows:
            if bj == b and tj > t:
                cands.append(v0 + t * (yj - v0) / tj)
        if t == 0.0:
            cands.append(v0)
    for i, (bi, ti, yi) in enumerate(rows):
        for bj, tj, yj in rows[i + 1:]:
            if bi != b or bj != b:
                continue
            lo, hi = min(ti, tj), max(ti, tj)
            if lo <= t <= hi and lo < hi:
                cands.append(np.interp(t, [lo, hi],
                                       [yi if ti < tj else yj,
                                        yj if ti < tj else yi]))
    if not cands:
        return -math.inf
    return max(cands)


class TestOriginChord1D:
    def test_hand_derived_pair(self):
        # branch 0 at distance 1 with value 0, branch 1 at distance 2
        # with value 2: ordinary chord hits 0 + (1/3)*2 = 2/3; doubling
        # the near side gives (2*2*0 + 1*2)/(1+4) = 2/5, doubling the
        # far side gives (2*0 + 2*2*2)/(2+2)... = 1, so bent = 2/5.
        pts = [ts.tree_point(ts.T3, 0, (1.0,)),
               ts.tree_point(ts.T3, 1, (2.0,))]
        vals = [0.0, 2.0]
        assert origin_close(pts, vals, hl.LOGCONCAVE, 2.0 / 3.0)
        assert origin_close(pts, vals, hl.BENT, 2.0 / 5.0)

    def test_equal_values_agree(self):
        pts = [ts.tree_point(ts.T3, 0, (0.7,)),
               ts.tree_point(ts.T3, 2, (1.9,))]
        assert origin_close(pts, [1.3, 1.3], hl.LOGCONCAVE, 1.3)
        assert origin_close(pts, [1.3, 1.3], hl.BENT, 1.3)

    def test_bent_never_exceeds_ordinary(self):
        r = np.random.default_rng(5)
        for _ in range(200):
            da, db = r.uniform(0.1, 3.0, size=2)
            ya, yb = r.normal(size=2)
            lc = chord_value(da, ya, db, yb, hl.LOGCONCAVE)
            bent = chord_value(da, ya, db, yb, hl.BENT)
            assert bent <= lc + 1e-12

    def test_origin_sample_dominates(self):
        pts = [ts.tree_point(ts.T3, 0, (1.0,)),
               ts.tree_point(ts.T3, 1, (1.0,)),
               ts.origin(ts.T3)]
        vals = [0.0, 0.0, 5.0]
        assert origin_close(pts, vals, hl.LOGCONCAVE, 5.0)
        assert origin_close(pts, vals, hl.BENT, 5.0)

    def test_single_branch_rejected(self):
        pts = [ts.tree_point(ts.T3, 1, (0.5,)),
               ts.tree_point(ts.T3, 1, (1.5,))]
        with pytest.raises(ValueError):
            hl.origin_value_1d(pts, [0.0, 0.0], hl.LOGCONCAVE)


def origin_close(pts, vals, mode, expect):
    got = hl.origin_value_1d(pts, vals, mode)
    return abs(got - expect) < 1e-12


class TestConcaveHull1D:
    def test_majorises_data(self):
        for seed in range(5):
            pts, y = t3_cloud(12 + seed, seed, with_origin=seed % 2 == 0)
            for mode in (hl.LOGCONCAVE, hl.BENT):
                h = hl.concave_hull_1d(pts, y, mode)
                worst = min(hl.evaluate_1d(h, p) - yi
                            for p, yi in zip(pts, y))
                assert worst >= -1e-12

    def test_matches_chord_closure(self):
        for seed in range(4):
            pts, y = t3_cloud(10, 100 + seed, with_origin=seed == 1)
            probes = list(pts) + [ts.origin(ts.T3)]
            r = np.random.default_rng(seed)
            for _ in range(30):
                b = int(r.integers(0, 3))
                probes.append(ts.tree_point(ts.T3, b,
                                            (float(r.uniform(0.0, 3.2)),)))
            for mode in (hl.LOGCONCAVE, hl.BENT):
                h = hl.concave_hull_1d(pts, y, mode)
                for x in probes:
                    a = hl.evaluate_1d(h, x)
                    b_ = brute_eval_1d(pts, y, mode, x)
                    if math.isinf(a) or math.isinf(b_):
                        assert a == b_
                    else:
                        assert a == pytest.approx(b_, abs=1e-11)

    def test_concave_along_geodesics(self):
        pts, y = t3_cloud(15, 7)
        h = hl.concave_hull_1d(pts, y, hl.LOGCONCAVE)
        r = np.random.default_rng(2)
        for _ in range(100):
            ba, bb = r.choice(3, size=2, replace=False)
            pa = ts.tree_point(ts.T3, int(ba), (float(r.uniform(0.0, 2.5)),))
            pb = ts.tree_point(ts.T3, int(bb), (float(r.uniform(0.0, 2.5)),))
            lam = float(r.uniform(0.1, 0.9))
            mid = ts.point_on_geodesic(pa, pb, lam)
            fa, fb = hl.evaluate_1d(h, pa), hl.evaluate_1d(h, pb)
            if not (np.isfinite(fa) and np.isfinite(fb)):
                continue
            fm = hl.evaluate_1d(h, mid)
            assert fm >= (1 - lam) * fa + lam * fb - 1e-10

    def test_bent_concave_within_branches(self):
        pts, y = t3_cloud(15, 9, with_origin=True)
        h = hl.concave_hull_1d(pts, y, hl.BENT)
        r = np.random.default_rng(3)
        for _ in range(100):
            b = int(r.integers(0, 3))
            ta, tb = r.uniform(0.0, 3.0, size=2)
            pa = ts.tree_point(ts.T3, b, (float(ta),))
            pb = ts.tree_point(ts.T3, b, (float(tb),))
            lam = float(r.uniform(0.1, 0.9))
            mid = ts.tree_point(ts.T3, b, ((1 - lam) * ta + lam * tb,))
            fa, fb = hl.evaluate_1d(h, pa), hl.evaluate_1d(h, pb)
            if not (np.isfinite(fa) and np.isfinite(fb)):
                continue
            assert (hl.evaluate_1d(h, mid)
                    >= (1 - lam) * fa + lam * fb - 1e-10)

    def test_bent_below_ordinary_everywhere(self):
        pts, y = t3_cloud(14, 13, with_origin=True)
        h_lc = hl.concave_hull_1d(pts, y, hl.LOGCONCAVE)
        h_b = hl.concave_hull_1d(pts, y, hl.BENT)
        r = np.random.default_rng(4)
        for _ in range(120):
            b = int(r.integers(0, 3))
            x = ts.tree_point(ts.T3, b, (float(r.uniform(0.0, 3.0)),))
            assert hl.evaluate_1d(h_b, x) <= hl.evaluate_1d(h_lc, x) + 1e-11

    def test_outside_domain_minus_inf(self):
        pts = [ts.tree_point(ts.T3, 0, (1.0,)),
               ts.tree_point(ts.T3, 1, (2.0,))]
        h = hl.concave_hull_1d(pts, [0.0, 0.0])
        assert hl.evaluate_1d(h, ts.tree_point(ts.T3, 0, (1.5,))) == -math.inf
        assert hl.evaluate_1d(h, ts.tree_point(ts.T3, 2, (0.1,))) == -math.inf
        assert np.isfinite(hl.evaluate_1d(h, ts.tree_point(ts.T3, 1, (1.9,))))

    def test_packed_matches_scalar(self):
        pts, y = t3_cloud(12, 21, with_origin=True)
        h = hl.concave_hull_1d(pts, y)
        r = np.random.default_rng(6)
        idx = r.integers(-1, 3, size=60)
        u = r.uniform(0.0, 3.5, size=60)
        u[idx < 0] = 0.0
        packed = hl.evaluate_1d_packed(h, idx, u)
        for k in range(60):
            x = (ts.origin(ts.T3) if idx[k] < 0
                 else ts.tree_point(ts.T3, int(idx[k]), (float(u[k]),)))
            want = hl.evaluate_1d(h, x)
            if math.isinf(want):
                assert packed[k] == want
            else:
                assert packed[k] == pytest.approx(want, abs=1e-12)

    def test_shift_values(self):
        pts, y = t3_cloud(10, 31)
        h = hl.concave_hull_1d(pts, y)
        probes = [ts.tree_point(ts.T3, b, (tt,))
                  for b in range(3) for tt in (0.2, 0.9, 1.7)]
        before = [hl.evaluate_1d(h, x) for x in probes]
        hl.shift_values(h, -0.75)
        for x, v in zip(probes, before):
            got = hl.evaluate_1d(h, x)
            if math.isinf(v):
                assert got == v
            else:
                assert got == pytest.approx(v - 0.75, abs=1e-12)

    def test_json_round_trip(self):
        pts, y = t3_cloud(11, 41, with_origin=True)
        h = hl.concave_hull_1d(pts, y, hl.BENT)
        h2 = hl.ConcavePWL1D.from_json_dict(h.to_json_dict())
        r = np.random.default_rng(8)
        for _ in range(40):
            b = int(r.integers(0, 3))
            x = ts.tree_point(ts.T3, b, (float(r.uniform(0.0, 3.2)),))
            a = hl.evaluate_1d(h, x)
            c = hl.evaluate_1d(h2, x)
            assert (a == c) or a == pytest.approx(c, abs=1e-12)

    def test_single_point(self):
        p = ts.tree_point(ts.T3, 2, (1.2,))
        h = hl.concave_hull_1d([p], [0.4])
        assert not h.through_origin
        assert hl.evaluate_1d(h, p) == pytest.approx(0.4)
        assert hl.evaluate_1d(h, ts.origin(ts.T3)) == -math.inf


class TestOriginBoundsLp:
    def test_two_orthogonal_pairs_pin_zero(self):
        pts = [ts.tree_point(ts.T4, (0, 1), (1.0, 0.0)),
               ts.tree_point(ts.T4, (0, 1), (0.0, 1.0)),
               ts.tree_point(ts.T4, (3, 8), (1.0, 0.0)),
               ts.tree_point(ts.T4, (3, 8), (0.0, 1.0))]
        ob = hl.origin_bounds_lp(pts, [1.0, 1.0, -1.0, -1.0])
        assert ob is not None
        lo, hi = ob[0], ob[1]
        assert abs(lo) < 1e-9 and abs(hi) < 1e-9

    def test_symmetric_axis_pair(self):
        ob = hl.origin_bounds_lp([ts.axis_point(1, 1.0),
                                  ts.axis_point(8, 1.0)], [0.7, 0.7])
        assert ob is not None
        assert ob[0] == pytest.approx(0.7, abs=1e-9)
        assert ob[1] == pytest.approx(0.7, abs=1e-9)

    def test_single_orthant_unconstrained(self):
        ob = hl.origin_bounds_lp(
            [ts.tree_point(ts.T4, (0, 1), (1.0, 1.0)),
             ts.tree_point(ts.T4, (0, 1), (0.5, 2.0))], [0.0, 0.0])
        assert ob is None


class TestHull2D:
    def test_majorises_data(self):
        for seed in range(6):
            pts, y = rand_cloud(10 + 3 * seed, n_orth=3 + seed % 4,
                                with_axis=seed % 2 == 0,
                                with_origin=seed % 3 == 0, seed=seed)
            h = hl.hull_2d(pts, y)
            worst = min(hl.evaluate_hbar(h, p) - yi
                        for p, yi in zip(pts, y))
            assert worst >= -1e-9

    def test_exact_integral_matches_grid(self):
        pts, y = rand_cloud(14, n_orth=4, with_axis=True, with_origin=True,
                            seed=7)
        h = hl.hull_2d(pts, y)
        exact = ig.integrate_exp_hull_2d(h)
        grid = ig.make_grid(ts.T4, spacing=0.01, radius=4.5)
        vals = hl.evaluate_hbar_packed(h, grid.idx, grid.u, grid.v)
        dens = np.zeros_like(vals)
        fin = np.isfinite(vals)
        dens[fin] = np.exp(vals[fin])
        approx = grid.integrate(dens)
        assert abs(exact - approx) < 5e-3 * max(exact, 1.0)

    def test_lp_route_matches_direct(self):
        pts, y = rand_cloud(14, n_orth=4, with_axis=True, with_origin=True,
                            seed=7)
        h = hl.hull_2d(pts, y)
        r = np.random.default_rng(3)
        for _ in range(40):
            o = int(r.integers(0, 15))
            u, v = r.uniform(0.0, 2.2, size=2)
            x = (ts.tree_point(ts.T4, ts.T4_EDGES[o], (u, v))
                 if (u or v) else ts.origin(ts.T4))
            a = hl.evaluate_hbar(h, x)
            b = hl._evaluate_hbar_lp(h, x)
            if math.isinf(a) and math.isinf(b):
                continue
            assert np.isfinite(a) and np.isfinite(b)
            assert a == pytest.approx(b, abs=1e-6)

    def test_concave_along_geodesics(self):
        pts, y = rand_cloud(12, n_orth=4, with_axis=True, seed=17)
        h = hl.hull_2d(pts, y)
        r = np.random.default_rng(9)
        checked = 0
        while checked < 60:
            i, j = r.choice(len(pts), size=2, replace=False)
            lam = float(r.uniform(0.1, 0.9))
            mid = ts.point_on_geodesic(pts[i], pts[j], lam)
            fa = hl.evaluate_hbar(h, pts[i])
            fb = hl.evaluate_hbar(h, pts[j])
            fm = hl.evaluate_hbar(h, mid)
            assert fm >= (1 - lam) * fa + lam * fb - 1e-8
            checked += 1

    def test_single_orthant_shortcut(self):
        h = hl.hull_2d([ts.tree_point(ts.T4, (0, 1), (1, 1)),
                        ts.tree_point(ts.T4, (0, 1), (2, 1)),
                        ts.tree_point(ts.T4, (0, 1), (1, 2)),
                        ts.tree_point(ts.T4, (0, 1), (1.3, 1.3))],
                       [0, 0, 0, 1.0])
        assert h.iterations == 0
        assert h.converged
        assert len(h.faces) > 0

    def test_far_point_leaves_projected_area_unchanged(self):
        x1 = ts.tree_point(ts.T4, (0, 1), (1.0, 0.5))
        x2 = ts.tree_point(ts.T4, (0, 1), (0.4, 1.2))
        x4 = ts.origin(ts.T4)
        x3 = ts.tree_point(ts.T4, (3, 8), (0.9, 0.9))
        h_no = hl.hull_2d([x1, x2, x4], [0.0, 0.0, 0.0])
        h_yes = hl.hull_2d([x1, x2, x4, x3], [0.0, 0.0, 0.0, 0.0])
        area_no = sum(0.5 * f.twice_area for f in h_no.faces)
        area_yes = sum(0.5 * f.twice_area for f in h_yes.faces)
        triangle = 0.5 * abs(1.0 * 1.2 - 0.4 * 0.5)
        assert abs(area_no - triangle) < 1e-9
        assert abs(area_no - area_yes) < 1e-9
        far = [pc for pc in h_yes.pieces
               if pc.orth == ts.T4_EDGE_INDEX[(3, 8)]]
        assert len(far) == 1
        assert far[0].on_axis is None

    def test_origin_certificates_accumulate(self):
        pts, y = rand_cloud(16, n_orth=5, with_axis=True, seed=23)
        st = hl.skeleton_state(pts, y)
        prev = None
        for _ in range(4):
            st.step()
            cur = st.origin_interval
            if prev is not None and cur is not None:
                assert cur[0] <= prev[0] + 1e-12
                assert cur[1] >= prev[1] - 1e-12
            prev = cur

    def test_single_point_hull(self):
        h = hl.hull_2d([ts.tree_point(ts.T4, (2, 7), (1.0, 1.0))], [0.5])
        assert len(h.pieces) == 1
        assert h.pieces[0].kind == "point"

    def test_origin_only_input(self):
        h = hl.hull_2d([ts.origin(ts.T4)], [0.3])
        assert h.origin_interval is not None
        assert h.origin_interval[1] == pytest.approx(0.3, abs=1e-12)

    def test_json_round_trip(self):
        pts, y = rand_cloud(14, n_orth=4, with_axis=True, with_origin=True,
                            seed=7)
        h = hl.hull_2d(pts, y)
        h2 = hl.Hull2D.from_json_dict(h.to_json_dict())
        assert ig.integrate_exp_hull_2d(h2) == pytest.approx(
            ig.integrate_exp_hull_2d(h), abs=1e-12)
        r = np.random.default_rng(12)
        for _ in range(30):
            o = int(r.integers(0, 15))
            u, v = r.uniform(0.0, 2.0, size=2)
            x = ts.tree_point(ts.T4, ts.T4_EDGES[o], (u, v))
            a, b = hl.evaluate_hbar(h, x), hl.evaluate_hbar(h2, x)
            if math.isinf(a) or math.isinf(b):
                assert a == b
            else:
                assert a == pytest.approx(b, abs=1e-9)

    def test_shift_values_2d(self):
        pts, y = rand_cloud(10, n_orth=3, seed=33)
        h = hl.hull_2d(pts, y)
        probes = pts[:6]
        before = [hl.evaluate_hbar(h, x) for x in probes]
        hl.shift_values(h, 1.25)
        for x, v in zip(probes, before):
            assert hl.evaluate_hbar(h, x) == pytest.approx(v + 1.25,
                                                           abs=1e-12)

    def test_structural_gradient_matches_finite_differences(self):
        pts, y = rand_cloud(7, n_orth=3, with_axis=True, with_origin=False,
                            seed=11)
        n = len(pts)
        cache = {}
        h = hl.hull_2d(pts, y, cache=cache)
        _, g = ig.integrate_exp_hull_2d_grad(h, n)
        eps = 1e-6
        for i in range(n):
            yp = np.array(y, float)
            ym = np.array(y, float)
            yp[i] += eps
            ym[i] -= eps
            fp = ig.integrate_exp_hull_2d(hl.hull_2d(pts, yp, cache=cache))
            fm = ig.integrate_exp_hull_2d(hl.hull_2d(pts, ym, cache=cache))
            fd = (fp - fm) / (2 * eps)
            assert g[i] == pytest.approx(fd, abs=1e-5)
