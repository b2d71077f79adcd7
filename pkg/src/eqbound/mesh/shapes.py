"""Mapped structured meshes for the bundled benchmark geometries."""
from __future__ import annotations

from itertools import permutations

import numpy as np

from .core import Mesh, boundary_facets


def _outer_point(theta: np.ndarray, side: float) -> np.ndarray:
    # ray from the origin at angle theta hits the square [0, side]^2 boundary
    c, s = np.cos(theta), np.sin(theta)
    t = side / np.maximum(np.maximum(c, s), 1e-300)
    return np.stack([t * c, t * s], axis=-1)


def _quarter_plate_grid(radius, side, n_arc, n_radial, grading):
    theta = np.linspace(0.0, np.pi / 2, 2 * n_arc + 1)
    s = np.linspace(0.0, 1.0, n_radial + 1)
    g = (grading ** s - 1.0) / (grading - 1.0) if grading != 1.0 else s
    inner = radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    outer = _outer_point(theta, side)
    pts = (1.0 - g)[None, :, None] * inner[:, None, :] + g[None, :, None] * outer[:, None, :]
    return pts  # (n_theta, n_r, 2)


def _label_plate(nodes, elements, radius, side, planar_axes=2):
    labels = {}
    tol = 1e-9 * side
    for key in boundary_facets(elements):
        p = nodes[list(key)]
        if np.all(np.abs(p[:, 0]) < tol):
            labels[key] = "symx"
        elif np.all(np.abs(p[:, 1]) < tol):
            labels[key] = "symy"
        elif np.all(np.abs(p[:, 0] - side) < tol):
            labels[key] = "right"
        elif np.all(np.abs(p[:, 1] - side) < tol):
            labels[key] = "top"
        elif planar_axes == 3 and np.all(np.abs(p[:, 2]) < tol):
            labels[key] = "symz"
        elif planar_axes == 3 and np.all(np.abs(p[:, 2] - p[:, 2].max()) < tol) and p[:, 2].max() > tol:
            labels[key] = "face"
        else:
            labels[key] = "hole"
    return labels


def plate_with_hole_2d(radius=0.2, side=1.0, n_arc=16, n_radial=32, grading=6.0) -> Mesh:
    """Quarter of a square plate with a central circular hole.

    Symmetry edges are labeled ``symx`` (x = 0) and ``symy`` (y = 0); the
    loaded edge x = side is ``right``, the others ``top`` and ``hole``.
    Element count is ``4 * n_arc * n_radial``.
    """
    grid = _quarter_plate_grid(radius, side, n_arc, n_radial, grading)
    nt, nr = grid.shape[:2]
    nodes = grid.reshape(-1, 2)
    i, j = np.meshgrid(np.arange(nt - 1), np.arange(nr - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    nid = lambda a, b: a * nr + b
    a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
    # split each quad along its shorter diagonal
    l_ac = np.linalg.norm(nodes[a] - nodes[c], axis=1)
    l_bd = np.linalg.norm(nodes[b] - nodes[d], axis=1)
    use_ac = l_ac <= l_bd
    t1 = np.where(use_ac[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
    t2 = np.where(use_ac[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
    elements = np.vstack([t1, t2])
    return Mesh(nodes, elements, _label_plate(nodes, elements, radius, side))


def plate_with_hole_3d(radius=0.2, side=1.0, thickness=0.1, n_arc=3, n_radial=5, n_thick=2,
                       grading=4.0) -> Mesh:
    """One-eighth of a thick plate with a hole (symmetry in x, y and z).

    Labels: ``symx``, ``symy``, ``symz`` (mid-plane), ``right`` (loaded),
    ``top``, ``face`` (free face z = thickness) and ``hole``.
    """
    grid = _quarter_plate_grid(radius, side, n_arc, n_radial, grading)
    nt, nr = grid.shape[:2]
    z = np.linspace(0.0, thickness, n_thick + 1)
    nz = len(z)
    xy = np.repeat(grid.reshape(-1, 2), nz, axis=0)
    nodes = np.hstack([xy, np.tile(z, nt * nr)[:, None]])
    shape = (nt, nr, nz)
    i, j, k = np.meshgrid(np.arange(nt - 1), np.arange(nr - 1), np.arange(nz - 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    tets = []
    for perm in permutations(range(3)):
        step = np.zeros(3, dtype=int)
        path = [step.copy()]
        for ax in perm:
            step[ax] += 1
            path.append(step.copy())
        tets.append(np.stack([np.ravel_multi_index((i + p[0], j + p[1], k + p[2]), shape)
                              for p in path], axis=1))
    elements = np.vstack(tets)
    return Mesh(nodes, elements, _label_plate(nodes, elements, radius, side, planar_axes=3))


def l_shape(n=13) -> Mesh:
    """L-shaped domain [-1,1]^2 minus (0,1]x[-1,0), re-entrant corner at 0.

    Built from three n x n squares (6 n^2 triangles).  Labels: ``bottom``
    (y = -1), ``right`` (x = 1) and ``free`` elsewhere.
    """
    h = 1.0 / n
    coords: dict[tuple[int, int], int] = {}
    nodes = []

    def node(ix, iy):
        key = (ix, iy)
        if key not in coords:
            coords[key] = len(nodes)
            nodes.append((ix * h, iy * h))
        return coords[key]

    elements = []
    for ox, oy in ((-n, -n), (-n, 0), (0, 0)):
        for a in range(n):
            for b in range(n):
                ix, iy = ox + a, oy + b
                p, q, r, s = node(ix, iy), node(ix + 1, iy), node(ix + 1, iy + 1), node(ix, iy + 1)
                # diagonals point away from the re-entrant corner
                if (ix + iy) % 2 == 0:
                    elements += [(p, q, r), (p, r, s)]
                else:
                    elements += [(p, q, s), (q, r, s)]
    nodes = np.array(nodes)
    elements = np.array(elements)
    labels = {}
    for key in boundary_facets(elements):
        p = nodes[list(key)]
        if np.all(np.abs(p[:, 1] + 1.0) < 1e-12):
            labels[key] = "bottom"
        elif np.all(np.abs(p[:, 0] - 1.0) < 1e-12):
            labels[key] = "right"
        else:
            labels[key] = "free"
    return Mesh(nodes, elements, labels)
