"""Tests for exact exp-integrals and midpoint grids.

Core claims
-----------
* ``dd_exp`` matches a 50-digit mpmath divided-difference oracle to
  near machine precision across clustered, repeated and well-separated
  nodes.
* Segment and triangle integrals of exp(affine) match adaptive
  quadrature, and their closed-form gradients match central finite
  differences.
* Midpoint grids integrate smooth decaying functions with the expected
  O(h^2) accuracy, and the CSV dump round-trips values.
* Richardson extrapolation recovers one-sided derivatives to O(h^3).
"""

import math

import mpmath as mp
import numpy as np
import pytest

from lctree import integrate as ig
from lctree import treespace as ts

mp.mp.dps = 50


def mp_dd_exp(nodes):
    """High-precision divided difference of exp (sorted nodes)."""
    nodes = [mp.mpf(float(x)) for x in nodes]
    table = [mp.e ** x for x in nodes]
    n = len(nodes)
    for level in range(1, n):
        new = []
        for i in range(n - level):
            if nodes[i + level] == nodes[i]:
                new.append(mp.e ** nodes[i] / mp.factorial(level))
            else:
                new.append(
                    (table[i + 1] - table[i]) / (nodes[i + level] - nodes[i]))
        table = new
    return float(table[0])


class TestDividedDifferences:
    def test_simple_values(self):
        assert float(ig.dd_exp(np.array([0.0]))) == 1.0
        assert float(ig.dd_exp(np.array([0.0, 0.0]))) == pytest.approx(1.0)
        # exp[0, 0, 0] = 1/2!
        assert float(ig.dd_exp(np.array([0.0, 0.0, 0.0]))) == pytest.approx(0.5)
        # exp[0, log 2] = 1 / log 2
        assert float(ig.dd_exp(np.array([0.0, math.log(2)]))) == pytest.approx(
            1.0 / math.log(2))

    def test_against_mpmath(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            m = int(rng.integers(2, 5))
            base = rng.uniform(-8, 3)
            scale = 10.0 ** rng.uniform(-9, 1.2)
            nodes = np.sort(base + rng.uniform(0, scale, m))
            if rng.random() < 0.3:
                nodes[int(rng.integers(m))] = nodes[0]
                nodes = np.sort(nodes)
            got = float(ig.dd_exp(nodes))
            ref = mp_dd_exp(nodes)
            assert got == pytest.approx(ref, rel=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(2)
        nodes = rng.uniform(-2, 2, size=(40, 3))
        batch = ig.dd_exp(nodes)
        assert batch.shape == (40,)
        for i in range(40):
            assert batch[i] == pytest.approx(float(ig.dd_exp(nodes[i])))


class TestExactIntegrals:
    def test_segment_against_quadrature(self):
        a, b, length = -1.3, 0.7, 2.5
        ref = float(mp.quad(lambda s: mp.e ** (a + (b - a) * s / length),
                            [0, length]))
        assert float(ig.exp_segment_integral(length, a, b)) == pytest.approx(
            ref, rel=1e-13)

    def test_segment_constant(self):
        assert float(ig.exp_segment_integral(3.0, -1.0, -1.0)) == pytest.approx(
            3.0 * math.exp(-1.0))

    def test_triangle_against_quadrature(self):
        # triangle (0,0), (2,0), (0,1); affine with vertex values l1, l2, l3
        l1, l2, l3 = 0.3, -1.1, 0.9

        def f(x, y):
            return mp.e ** (l1 * (1 - x / 2 - y) + l2 * (x / 2) + l3 * y)

        ref = float(mp.quad(lambda x: mp.quad(lambda y: f(x, y),
                                              [0, 1 - x / 2]), [0, 2]))
        assert float(ig.exp_triangle_integral(2.0, l1, l2, l3)) == pytest.approx(
            ref, rel=1e-12)

    def test_triangle_constant(self):
        # constant value c over a triangle of area A integrates to A e^c
        assert float(ig.exp_triangle_integral(5.0, 0.2, 0.2, 0.2)) == \
            pytest.approx(2.5 * math.exp(0.2))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        eps = 1e-6
        for _ in range(20):
            l = rng.uniform(-2, 2, 3)
            area2 = float(rng.uniform(0.1, 4))
            _, d1, d2, d3 = ig.exp_triangle_integral_grad(area2, *l)
            for j, dj in enumerate((d1, d2, d3)):
                lp, lm = l.copy(), l.copy()
                lp[j] += eps
                lm[j] -= eps
                fd = (float(ig.exp_triangle_integral(area2, *lp))
                      - float(ig.exp_triangle_integral(area2, *lm))) / (2 * eps)
                assert float(dj) == pytest.approx(fd, rel=1e-6, abs=1e-9)
        val, da, db = ig.exp_segment_integral_grad(1.7, 0.4, -0.9)
        fd = (float(ig.exp_segment_integral(1.7, 0.4 + eps, -0.9))
              - float(ig.exp_segment_integral(1.7, 0.4 - eps, -0.9))) / (2 * eps)
        assert float(da) == pytest.approx(fd, rel=1e-7)


class TestGrids:
    def test_t3_grid_shape(self):
        grid = ig.make_grid(ts.T3, spacing=0.5, radius=2.0)
        assert len(grid) == 3 * 4
        assert grid.weight == 0.5
        assert set(grid.idx.tolist()) == {0, 1, 2}
        assert grid.u.min() == 0.25 and grid.u.max() == 1.75

    def test_t4_grid_shape(self):
        grid = ig.make_grid(ts.T4, spacing=1.0, radius=2.0)
        assert len(grid) == 15 * 4
        assert grid.weight == 1.0

    def test_t3_exponential_integral(self):
        grid = ig.make_grid(ts.T3, spacing=0.01, radius=10.0)
        vals = np.exp(-grid.u)
        exact = 3 * (1 - math.exp(-10))
        assert grid.integrate(vals) == pytest.approx(exact, rel=1e-5)

    def test_t4_product_exponential(self):
        grid = ig.make_grid(ts.T4, spacing=0.02, radius=6.0)
        vals = np.exp(-grid.u - grid.v)
        exact = 15 * (1 - math.exp(-6)) ** 2
        assert grid.integrate(vals) == pytest.approx(exact, rel=1e-4)

    def test_ise_of_known_difference(self):
        grid = ig.make_grid(ts.T3, spacing=0.01, radius=10.0)
        f = np.exp(-grid.u)
        g = np.exp(-2.0 * grid.u)
        # int (e^-t - e^-2t)^2 over three branches
        exact = 3 * (0.5 - 2.0 / 3.0 + 0.25)
        assert ig.ise(f, g, grid) == pytest.approx(exact, rel=1e-4)

    def test_csv_dump(self, tmp_path):
        grid = ig.make_grid(ts.T4, spacing=1.0, radius=1.0)
        vals = np.arange(len(grid), dtype=float)
        path = tmp_path / "grid.csv"
        ig.grid_values_to_csv(str(path), grid, vals)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "orthant,u,v,value"
        assert len(lines) == len(grid) + 1
        assert lines[1].startswith("0-1,0.5,0.5,")


class TestOneSidedDerivative:
    def test_polynomial_exact(self):
        assert ig.one_sided_derivative(lambda h: 2 + 3 * h + h * h) == \
            pytest.approx(3.0, abs=1e-12)

    def test_exponential(self):
        d = ig.one_sided_derivative(lambda h: math.exp(2 * h) + 3 * h)
        assert d == pytest.approx(5.0, abs=1e-9)

    def test_absolute_value_kink(self):
        # right derivative of |h| at 0 is +1
        assert ig.one_sided_derivative(abs) == pytest.approx(1.0, abs=1e-12)
