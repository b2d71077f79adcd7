"""Simplicial mesh container, structured generators, refinement and quality."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations
from math import factorial

import numpy as np

from ..errors import DegenerateElementError, MeshError

DEGENERACY_FACTOR = 1e-14


def simplex_measures(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed measures of the simplices ``elements`` (shape ``(m, d+1)``)."""
    x = nodes[elements]
    jac = x[:, 1:, :] - x[:, :1, :]
    d = nodes.shape[1]
    return np.linalg.det(jac) / factorial(d)


def _bbox_measure(nodes: np.ndarray) -> float:
    ext = nodes.max(axis=0) - nodes.min(axis=0)
    return float(np.prod(ext)) if np.all(ext > 0) else 0.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh in 2D (triangles) or 3D (tetrahedra).

    Attributes
    ----------
    nodes : (n, d) float array
    elements : (m, d+1) int array, positively oriented after construction
    boundary_labels : dict mapping a sorted tuple of facet node ids to a label
    parent : optional (m,) array; for meshes produced by :func:`uniform_refine`
        the id of the coarse element containing each element.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_labels: dict = field(default_factory=dict)
    parent: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise MeshError(f"nodes must have shape (n, 2) or (n, 3), got {nodes.shape}")
        d = nodes.shape[1]
        if elements.ndim != 2 or elements.shape[1] != d + 1:
            raise MeshError(f"{d}D mesh needs {d + 1} nodes per element, got {elements.shape}")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise MeshError("element references a node id out of range")
        vol = simplex_measures(nodes, elements)
        neg = vol < 0
        if np.any(neg):
            elements = elements.copy()
            elements[neg, 0], elements[neg, 1] = elements[neg, 1], elements[neg, 0].copy()
            vol = np.abs(vol)
        tol = DEGENERACY_FACTOR * _bbox_measure(nodes)
        bad = np.flatnonzero(vol <= tol)
        if len(bad):
            raise DegenerateElementError(
                f"{len(bad)} degenerate element(s), first id {bad[0]} (measure {vol[bad[0]]:.3e})"
            )
        labels = {tuple(sorted(int(i) for i in k)): str(v) for k, v in self.boundary_labels.items()}
        if labels:
            bset = set(boundary_facets(elements))
            for key in labels:
                if len(key) != d:
                    raise MeshError(f"boundary facet {key} does not have {d} nodes")
                if key not in bset:
                    raise MeshError(f"labeled facet {key} is not a boundary facet")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "boundary_labels", labels)
        object.__setattr__(self, "_measures", vol)

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def measures(self) -> np.ndarray:
        return self._measures

    def labels(self) -> set[str]:
        return set(self.boundary_labels.values())


def _all_facets(elements: np.ndarray) -> np.ndarray:
    d1 = elements.shape[1]
    return np.sort(np.concatenate([np.delete(elements, f, axis=1) for f in range(d1)]), axis=1)


def _facet_counts(elements: np.ndarray) -> dict:
    uniq, counts = np.unique(_all_facets(elements), axis=0, return_counts=True)
    return {tuple(int(i) for i in row): int(c) for row, c in zip(uniq, counts)}


# --------------------------------------------------------------------------
# generators

def generate_structured(extents, counts, origin=None) -> Mesh:
    """Structured mesh of a rectangle (2D) or box (3D).

    Rectangles get two triangles per cell with alternating diagonals; boxes
    get the six-tetrahedron Kuhn split of every cell.  Boundary facets are
    labeled ``left/right`` (x), ``bottom/top`` (y) and ``front/back`` (z).
    """
    extents = np.asarray(extents, dtype=float)
    counts = [int(c) for c in counts]
    dim = len(extents)
    if dim not in (2, 3) or len(counts) != dim:
        raise MeshError("extents and counts must both have length 2 or 3")
    if any(c < 1 for c in counts):
        raise MeshError(f"subdivision counts must be >= 1, got {counts}")
    if np.any(extents <= 0):
        raise MeshError("extents must be positive")
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
    axes = [np.linspace(0.0, extents[k], counts[k] + 1) + origin[k] for k in range(dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grid], axis=1)
    shape = tuple(c + 1 for c in counts)

    def nid(*idx):
        return np.ravel_multi_index(idx, shape)

    if dim == 2:
        nx, ny = counts
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
        even = (i + j) % 2 == 0
        t1 = np.where(even[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
        t2 = np.where(even[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
        elements = np.vstack([t1, t2])
    else:
        nx, ny, nz = counts
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        tets = []
        for perm in permutations(range(3)):
            path = [np.zeros(3, dtype=int)]
            for ax in perm:
                step = path[-1].copy()
                step[ax] += 1
                path.append(step)
            tets.append(np.stack([nid(i + p[0], j + p[1], k + p[2]) for p in path], axis=1))
        elements = np.vstack(tets)
    labels = _box_labels(nodes, elements, origin, origin + extents)
    return Mesh(nodes, elements, labels)


_SIDE_NAMES = (("left", "right"), ("bottom", "top"), ("front", "back"))


def _box_labels(nodes, elements, lo, hi) -> dict:
    labels = {}
    scale = float(np.max(hi - lo))
    for key in boundary_facets(elements):
        pts = nodes[list(key)]
        for ax in range(nodes.shape[1]):
            if np.all(np.abs(pts[:, ax] - lo[ax]) <= 1e-12 * scale):
                labels[key] = _SIDE_NAMES[ax][0]
            elif np.all(np.abs(pts[:, ax] - hi[ax]) <= 1e-12 * scale):
                labels[key] = _SIDE_NAMES[ax][1]
    return labels


def boundary_facets(elements: np.ndarray) -> list[tuple]:
    """Sorted node tuples of the facets owned by a single element."""
    uniq, counts = np.unique(_all_facets(np.asarray(elements)), axis=0, return_counts=True)
    return [tuple(int(i) for i in row) for row in uniq[counts == 1]]


# --------------------------------------------------------------------------
# refinement

_OCTA_SPLITS = {
    # diagonal (midpoint keys) -> equator cycle
    ((0, 1), (2, 3)): [(0, 2), (0, 3), (1, 3), (1, 2)],
    ((0, 2), (1, 3)): [(0, 1), (0, 3), (2, 3), (1, 2)],
    ((0, 3), (1, 2)): [(0, 1), (0, 2), (2, 3), (1, 3)],
}


def _refine_once(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, dict, np.ndarray]:
    nodes, elements = mesh.nodes, mesh.elements
    d = mesh.dimension
    pairs = list(combinations(range(d + 1), 2))
    local_edges = np.stack([np.sort(elements[:, [a, b]], axis=1) for a, b in pairs], axis=1)
    flat = local_edges.reshape(-1, 2)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.reshape(len(elements), len(pairs))
    mid_ids = len(nodes) + np.arange(len(uniq))
    new_nodes = np.vstack([nodes, 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])])
    mid = {p: mid_ids[inv[:, n]] for n, p in enumerate(pairs)}
    v = [elements[:, k] for k in range(d + 1)]

    if d == 2:
        children = [
            (v[0], mid[(0, 1)], mid[(0, 2)]),
            (mid[(0, 1)], v[1], mid[(1, 2)]),
            (mid[(0, 2)], mid[(1, 2)], v[2]),
            (mid[(0, 1)], mid[(1, 2)], mid[(0, 2)]),
        ]
        kids = np.stack([np.stack(c, axis=1) for c in children], axis=1)
    else:
        corners = [
            (v[0], mid[(0, 1)], mid[(0, 2)], mid[(0, 3)]),
            (mid[(0, 1)], v[1], mid[(1, 2)], mid[(1, 3)]),
            (mid[(0, 2)], mid[(1, 2)], v[2], mid[(2, 3)]),
            (mid[(0, 3)], mid[(1, 3)], mid[(2, 3)], v[3]),
        ]
        kids = np.zeros((len(elements), 8, 4), dtype=np.int64)
        for n, c in enumerate(corners):
            kids[:, n] = np.stack(c, axis=1)
        # split the central octahedron along its shortest diagonal
        diags = list(_OCTA_SPLITS)
        lengths = np.stack(
            [np.linalg.norm(new_nodes[mid[p]] - new_nodes[mid[q]], axis=1) for p, q in diags], axis=1
        )
        choice = np.argmin(lengths, axis=1)
        for c, (p, q) in enumerate(diags):
            sel = choice == c
            cyc = _OCTA_SPLITS[(p, q)]
            for n in range(4):
                a, b = cyc[n], cyc[(n + 1) % 4]
                kids[sel, 4 + n] = np.stack([mid[p][sel], mid[q][sel], mid[a][sel], mid[b][sel]], axis=1)
    nkids = kids.shape[1]
    new_elements = kids.reshape(-1, d + 1)
    parent = np.repeat(np.arange(len(elements)), nkids)

    edge_mid = {(int(a), int(b)): int(m) for (a, b), m in zip(uniq, mid_ids)}

    def m(a, b):
        return edge_mid[(a, b) if a < b else (b, a)]

    labels = {}
    for key, lab in mesh.boundary_labels.items():
        if d == 2:
            a, b = key
            subs = [(a, m(a, b)), (m(a, b), b)]
        else:
            a, b, c = key
            ab, ac, bc = m(a, b), m(a, c), m(b, c)
            subs = [(a, ab, ac), (b, ab, bc), (c, ac, bc), (ab, bc, ac)]
        for s in subs:
            labels[tuple(sorted(s))] = lab
    return new_nodes, new_elements, labels, parent


def uniform_refine(mesh: Mesh, levels: int = 1) -> Mesh:
    """Uniform midpoint refinement, ``levels`` times.

    Coarse node ids are preserved (new nodes are appended), so the coarse
    P1 space is nested in the refined one.  ``parent`` of the result maps
    each fine element to its ancestor in ``mesh``.
    """
    if levels < 0:
        raise MeshError("levels must be >= 0")
    parent = np.arange(mesh.n_elements)
    current = mesh
    for _ in range(levels):
        nodes, elements, labels, par = _refine_once(current)
        parent = parent[par]
        current = Mesh(nodes, elements, labels)
    return Mesh(current.nodes, current.elements, current.boundary_labels, parent=parent)


# --------------------------------------------------------------------------
# quality metrics

@dataclass(frozen=True)
class QualityMetrics:
    radius_ratio: np.ndarray
    edge_or_area_ratio: np.ndarray


def _check_simplex(x: np.ndarray) -> float:
    d = x.shape[1]
    jac = (x[1:] - x[:1]).T
    vol = abs(np.linalg.det(jac)) / factorial(d)
    scale = max(np.ptp(x, axis=0).max(), np.finfo(float).tiny) ** d
    if vol <= DEGENERACY_FACTOR * scale:
        raise DegenerateElementError("degenerate element (zero measure)")
    return vol


def _facet_areas(x: np.ndarray) -> np.ndarray:
    areas = []
    for f in range(4):
        p = np.delete(x, f, axis=0)
        areas.append(0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))
    return np.array(areas)


def circumradius(x: np.ndarray) -> float:
    """Radius of the circumscribed circle/sphere of simplex ``x``."""
    e = x[1:] - x[0]  # relative to a vertex: no cancellation far from the origin
    center = np.linalg.solve(2.0 * e, np.sum(e ** 2, axis=1))
    return float(np.linalg.norm(center))


def radius_ratio(element) -> float:
    """Inradius over circumradius: 1/2 for the equilateral triangle, 1/3
    for the regular tetrahedron."""
    x = np.asarray(element, dtype=float)
    vol = _check_simplex(x)
    d = x.shape[1]
    if d == 2:
        perim = sum(np.linalg.norm(x[i] - x[j]) for i, j in combinations(range(3), 2))
        r_in = 2.0 * vol / perim
    else:
        r_in = 3.0 * vol / _facet_areas(x).sum()
    return r_in / circumradius(x)


def edge_or_area_ratio(element) -> float:
    """Shortest/longest edge (triangles) or smallest/largest face area (tets)."""
    x = np.asarray(element, dtype=float)
    _check_simplex(x)
    if x.shape[1] == 2:
        sizes = np.array([np.linalg.norm(x[i] - x[j]) for i, j in combinations(range(3), 2)])
    else:
        sizes = _facet_areas(x)
    return float(sizes.min() / sizes.max())


def quality_metrics(mesh: Mesh) -> QualityMetrics:
    x = mesh.nodes[mesh.elements]
    return QualityMetrics(
        radius_ratio=np.array([radius_ratio(e) for e in x]),
        edge_or_area_ratio=np.array([edge_or_area_ratio(e) for e in x]),
    )
