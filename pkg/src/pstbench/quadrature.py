"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1).

All rules return ``(points, weights)`` with points as barycentric-free
parameters ``(s, t)`` so that ``x = v0 + s*(v1 - v0) + t*(v2 - v0)``.
Weights sum to 1/2 (the reference area); callers multiply by ``2*area``.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _symmetric_rules():
    rules = {}
    rules[1] = (np.array([[1 / 3, 1 / 3]]), np.array([0.5]))
    rules[2] = (
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.full(3, 1 / 6),
    )
    # Strang-Fix 6-point, degree 3 (positive weights).
    a, b = 0.659027622374092, 0.231933368553031
    c = 1.0 - a - b
    pts = [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]
    rules[3] = (np.array(pts), np.full(6, 1 / 12))
    # Radon 7-point, degree 5.
    s15 = np.sqrt(15.0)
    a1, b1 = (6 - s15) / 21, (9 + 2 * s15) / 21
    a2, b2 = (6 + s15) / 21, (9 - 2 * s15) / 21
    w1, w2 = (155 - s15) / 2400, (155 + s15) / 2400
    pts = [(1 / 3, 1 / 3), (a1, a1), (b1, a1), (a1, b1), (a2, a2), (b2, a2), (a2, b2)]
    rules[5] = (np.array(pts), np.array([9 / 80] + [w1] * 3 + [w2] * 3))
    return rules


@lru_cache(maxsize=None)
def collapsed_gauss(n):
    """Conical product rule with ``n*n`` points, exact to degree ``2n - 1``."""
    xg, wg = _gauss01(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = (xj + 1.0) / 2.0
    wj = wj / 4.0
    u, v = np.meshgrid(xj, xg, indexing="ij")
    w = np.outer(wj, wg)
    pts = np.stack([u.ravel(), (v * (1.0 - u)).ravel()], axis=-1)
    return pts, w.ravel()


def triangle_rule(degree):
    """Rule exact for polynomials up to ``degree`` (at least)."""
    if degree < 1:
        raise ValueError(f"quadrature degree must be >= 1, got {degree}")
    rules = _symmetric_rules()
    for d in sorted(rules):
        if d >= degree:
            return rules[d]
    return collapsed_gauss((degree + 2) // 2)


@lru_cache(maxsize=None)
def vertex_graded_rule(n):
    """Rule graded toward all three vertices.

    The triangle is split into six pieces (vertex, edge midpoint, centroid)
    and each piece carries an ``n x n`` Duffy rule collapsed at its vertex.
    Integrands that are homogeneous of degree 0 or -1 at a vertex become
    smooth in the collapsed coordinates.
    """
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    centre = corners.mean(axis=0)
    xg, wg = _gauss01(n)
    u, v = np.meshgrid(xg, xg, indexing="ij")
    u, v = u.ravel(), v.ravel()
    w = np.outer(wg, wg).ravel()
    pts, wts = [], []
    for i in range(3):
        for j in (1, 2):
            a = corners[i]
            mid = 0.5 * (a + corners[(i + j) % 3])
            e1, e2 = mid - a, centre - mid
            pts.append(a + u[:, None] * e1 + (u * v)[:, None] * e2)
            wts.append(w * abs(e1[0] * e2[1] - e1[1] * e2[0]) * u)
    return np.concatenate(pts), np.concatenate(wts)
