"""Simplex quadrature and monomial bases on the reference simplex.

The reference simplex has vertices ``0, e_1, ..., e_d``.  Rules are
conical-product (collapsed Gauss-Jacobi) rules, exact for polynomials of
the requested total degree.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


def _jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # Gauss-Jacobi on [0, 1] with weight (1 - u)**alpha
    t, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_quadrature(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(nq, dim)`` and weights ``(nq,)`` on the reference simplex.

    Weights sum to the reference measure ``1/dim!``.  ``dim == 0`` gives the
    trivial one-point rule used for facets of segments.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    n = max(1, (degree + 2) // 2)
    if dim == 1:
        u, w = _jacobi01(n, 0)
        return u[:, None], w
    if dim == 2:
        u, wu = _jacobi01(n, 1)
        v, wv = _jacobi01(n, 0)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        pts = np.stack([uu.ravel(), ((1 - uu) * vv).ravel()], axis=1)
        return pts, np.outer(wu, wv).ravel()
    if dim == 3:
        u, wu = _jacobi01(n, 2)
        v, wv = _jacobi01(n, 1)
        s, ws = _jacobi01(n, 0)
        uu, vv, ss = np.meshgrid(u, v, s, indexing="ij")
        pts = np.stack(
            [uu.ravel(), ((1 - uu) * vv).ravel(), ((1 - uu) * (1 - vv) * ss).ravel()],
            axis=1,
        )
        w = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
        return pts, w
    raise ValueError(f"unsupported simplex dimension {dim}")


def reference_vertices(dim: int) -> np.ndarray:
    return np.vstack([np.zeros(dim), np.eye(dim)])


def reference_measure(dim: int) -> float:
    return 1.0 / factorial(dim)


@lru_cache(maxsize=None)
def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent tuples of all monomials of total degree <= ``degree``."""
    exps = [e for e in product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return np.array(exps, dtype=int)


def monomials(points: np.ndarray, degree: int) -> np.ndarray:
    """Values ``(npts, nb)`` of the monomial basis at ``points``."""
    pts = np.atleast_2d(points)
    exps = monomial_exponents(pts.shape[1], degree)
    return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)


def monomial_gradients(points: np.ndarray, degree: int) -> np.ndarray:
    """Gradients ``(npts, nb, dim)`` of the monomial basis."""
    pts = np.atleast_2d(points)
    dim = pts.shape[1]
    exps = monomial_exponents(dim, degree)
    out = np.zeros((pts.shape[0], len(exps), dim))
    for k in range(dim):
        e = exps.copy()
        coef = e[:, k].astype(float)
        e[:, k] = np.maximum(e[:, k] - 1, 0)
        out[:, :, k] = coef[None, :] * np.prod(pts[:, None, :] ** e[None, :, :], axis=2)
    return out


def facet_quadrature(dim: int, degree: int):
    """Quadrature on each facet of the reference ``dim``-simplex.

    Returns a list indexed by local facet ``f`` (the facet opposite vertex
    ``f``) of ``(points_in_element_ref, weights, facet_barycentrics)``.
    Weights sum to 1/(dim-1)! (reference facet measure in its own chart);
    scale by ``|facet| * (dim-1)!`` to integrate over a physical facet.
    """
    verts = reference_vertices(dim)
    qp, qw = simplex_quadrature(dim - 1, degree)
    # barycentrics of the (dim-1)-simplex chart
    bary = np.hstack([1.0 - qp.sum(axis=1, keepdims=True), qp])
    rules = []
    for f in range(dim + 1):
        fv = np.delete(np.arange(dim + 1), f)
        pts = bary @ verts[fv]
        rules.append((pts, qw, bary))
    return rules
