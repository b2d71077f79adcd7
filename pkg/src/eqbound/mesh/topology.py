"""Facet table, orientation signs and vertex star-patches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TopologyError
from .core import Mesh


@dataclass(frozen=True, eq=False)
class Topology:
    """Facet/element incidence of a :class:`Mesh`.

    ``facets[f]`` holds the sorted node ids of facet ``f``.  For every facet
    the adjacent elements are stored in increasing id order; the first one
    carries the sign ``+1`` and, for interior facets, the second carries
    ``-1``.  Missing neighbours are ``-1`` with sign ``0``.

    ``element_facets[e, k]`` is the facet opposite local vertex ``k`` of
    element ``e`` and ``element_signs[e, k]`` the sign that element sees.
    ``element_facet_perm[e, k, a]`` is the position, inside the sorted facet
    node list, of the ``a``-th node of that local facet (local order).
    """

    mesh: Mesh
    facets: np.ndarray
    facet_elements: np.ndarray
    facet_signs: np.ndarray
    facet_labels: np.ndarray
    element_facets: np.ndarray
    element_signs: np.ndarray
    element_facet_perm: np.ndarray
    facet_measures: np.ndarray
    facet_normals: np.ndarray
    patch_ptr: np.ndarray
    patch_elem: np.ndarray
    patch_facet_ptr: np.ndarray
    patch_facet: np.ndarray

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def boundary(self) -> np.ndarray:
        return self.facet_elements[:, 1] < 0

    def patch_elements(self, vertex: int) -> np.ndarray:
        return self.patch_elem[self.patch_ptr[vertex]:self.patch_ptr[vertex + 1]]

    def patch_facets(self, vertex: int) -> np.ndarray:
        return self.patch_facet[self.patch_facet_ptr[vertex]:self.patch_facet_ptr[vertex + 1]]

    @property
    def vertex_patches(self) -> dict:
        """Map vertex id -> (patch elements, patch facets)."""
        return {
            v: (self.patch_elements(v), self.patch_facets(v))
            for v in range(self.mesh.n_nodes)
            if self.patch_ptr[v + 1] > self.patch_ptr[v]
        }


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients ``(m, d+1, d)`` of the P1 hat functions on each element."""
    x = mesh.nodes[mesh.elements]
    jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
    jinv = np.linalg.inv(jac)
    g = np.zeros((mesh.n_elements, mesh.dimension + 1, mesh.dimension))
    g[:, 1:, :] = jinv
    g[:, 0, :] = -jinv.sum(axis=1)
    return g


def _csr(keys: np.ndarray, vals: np.ndarray, n: int):
    order = np.lexsort((vals, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, keys + 1, 1)
    return np.cumsum(ptr), vals[order]


def build_topology(mesh: Mesh) -> Topology:
    elements = mesh.elements
    m, d1 = elements.shape
    d = d1 - 1
    local = np.stack([np.delete(elements, k, axis=1) for k in range(d1)], axis=1)  # (m, d1, d)
    flat = np.sort(local.reshape(-1, d), axis=1)
    facets, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(m, d1)
    if np.any(counts > 2):
        bad = facets[np.argmax(counts)]
        raise TopologyError(f"non-manifold facet {tuple(bad)} shared by {counts.max()} elements")
    nf = len(facets)
    facet_elements = -np.ones((nf, 2), dtype=np.int64)
    # elements visited in increasing id order: first hit gets slot 0
    elem_ids = np.repeat(np.arange(m), d1)
    fid = inv.ravel()
    order = np.lexsort((elem_ids, fid))
    fid_s, el_s = fid[order], elem_ids[order]
    first = np.ones(len(fid_s), dtype=bool)
    first[1:] = fid_s[1:] != fid_s[:-1]
    facet_elements[fid_s[first], 0] = el_s[first]
    facet_elements[fid_s[~first], 1] = el_s[~first]
    facet_signs = np.where(facet_elements >= 0, 1, 0)
    facet_signs[:, 1] *= -1
    element_signs = np.where(facet_elements[inv, 0] == np.arange(m)[:, None], 1, -1)

    # position of each local facet node inside the sorted facet node list
    perm = np.argsort(np.argsort(local, axis=2), axis=2)

    grads = barycentric_gradients(mesh)
    gnorm = np.linalg.norm(grads, axis=2)  # (m, d1)
    elem_meas = d * mesh.measures[:, None] * gnorm
    facet_measures = np.zeros(nf)
    facet_measures[inv.ravel()] = elem_meas.ravel()
    owner = facet_elements[:, 0]
    # local index of each facet in its owner element
    loc = np.argmax(inv[owner] == np.arange(nf)[:, None], axis=1)
    g_owner = grads[owner, loc]
    facet_normals = -g_owner / np.linalg.norm(g_owner, axis=1, keepdims=True)

    labels = np.full(nf, "", dtype=object)
    if mesh.boundary_labels:
        lookup = {tuple(f): i for i, f in enumerate(facets.tolist())}
        for key, lab in mesh.boundary_labels.items():
            labels[lookup[key]] = lab

    nodes_el = elements.ravel()
    patch_ptr, patch_elem = _csr(nodes_el, np.repeat(np.arange(m), d1), mesh.n_nodes)
    fnodes = facets.ravel()
    patch_facet_ptr, patch_facet = _csr(fnodes, np.repeat(np.arange(nf), d), mesh.n_nodes)

    return Topology(
        mesh=mesh,
        facets=facets,
        facet_elements=facet_elements,
        facet_signs=facet_signs,
        facet_labels=labels,
        element_facets=inv,
        element_signs=element_signs,
        element_facet_perm=perm,
        facet_measures=facet_measures,
        facet_normals=facet_normals,
        patch_ptr=patch_ptr,
        patch_elem=patch_elem,
        patch_facet_ptr=patch_facet_ptr,
        patch_facet=patch_facet,
    )
