"""Independent Euclidean log-concave MLE oracle for model validation.

Solves the one-dimensional log-concave maximum likelihood problem on
the real line by direct convex minimization: restricting the objective
to concave value vectors loses nothing (replacing any vector by its
envelope values can only improve the objective), so the least concave
majorant reduces to linear interpolation between samples, the integral
has a closed form per segment, and explicit concavity constraints turn
the problem into a smooth convex program.  Shares no code with the
tree-space machinery under test.
"""

import math

import numpy as np
from scipy.optimize import LinearConstraint, minimize


def exp_segment(a, b, ya, yb):
    """Exact integral of exp(linear) over [a, b] with endpoint values."""
    d = yb - ya
    length = b - a
    if abs(d) < 1e-9:
        return length * math.exp(0.5 * (ya + yb)) * (1.0 + d * d / 24.0)
    return length * (math.exp(yb) - math.exp(ya)) / d


def objective(y, x, w):
    """Negative weighted values plus the exact integral of exp."""
    total = 0.0
    for i in range(len(x) - 1):
        total += exp_segment(x[i], x[i + 1], y[i], y[i + 1])
    return -float(w @ y) + total


def concavity_matrix(x):
    """Rows evaluate slope drops; nonnegative rows mean concave values."""
    n = len(x)
    rows = []
    for i in range(1, n - 1):
        row = np.zeros(n)
        h0 = x[i] - x[i - 1]
        h1 = x[i + 1] - x[i]
        row[i - 1] = 1.0 / h0
        row[i] = -1.0 / h0 - 1.0 / h1
        row[i + 1] = 1.0 / h1
        rows.append(-row)
    return np.array(rows)


def fit_euclid_logconcave(x, weights=None):
    """Fit the 1D log-concave MLE by constrained convex minimization.

    Returns
    -------
    (x_sorted, log_density_values, sigma_min)
        Sorted sample positions, normalised log-density values at them
        (linear interpolation gives the log density between samples,
        minus infinity outside), and the minimal objective value.
    """
    order = np.argsort(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)[order]
    n = len(x)
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)[order]
        w = w / w.sum()
    mu = float(w @ x)
    sd = math.sqrt(float(w @ (x - mu) ** 2)) or 1.0
    y0 = -0.5 * ((x - mu) / sd) ** 2 - math.log(sd * math.sqrt(2 * math.pi))
    a_mat = concavity_matrix(x)
    cons = [LinearConstraint(a_mat, 0.0, np.inf)] if len(a_mat) else []
    best = None
    y_start = y0
    for _ in range(3):
        res = minimize(objective, y_start, args=(x, w), method="SLSQP",
                       constraints=cons,
                       options={"maxiter": 2000, "ftol": 1e-14})
        if best is None or res.fun < best.fun:
            best = res
        y_start = res.x
    y = best.x
    total = sum(exp_segment(x[i], x[i + 1], y[i], y[i + 1])
                for i in range(n - 1))
    return x, y - math.log(total), float(best.fun)
