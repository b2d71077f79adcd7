"""Element-level Neumann problems solved with a high-degree displacement FEM.

Each element carries a displacement space of total degree ``p + k`` (``k = 3``
by default) spanned by monomials in the element's reference coordinates.
Given element-boundary tractions and a body force that together have zero
resultant and moment, the local problem has a stress solution that is unique.
Rigid modes are fixed by zero mean displacement and zero mean rotation.

Tractions are passed per element as ``(m, d+1, d, d)`` arrays: local facet
``k`` (opposite local vertex ``k``), facet node ``a`` in local order, and
component.  They are already multiplied by the orientation sign, so they are
the physical traction ``sigma n`` on the outward normal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import NamedTuple

import numpy as np

from .elasticity import VOIGT, Material, voigt_to_tensor
from .errors import DegenerateElementError, IncompatibleDataError
from .mesh import Mesh, Topology
from .quadrature import (
    facet_quadrature,
    monomial_exponents,
    monomial_gradients,
    monomials,
    simplex_quadrature,
)

COMPAT_TOL = 1e-8
_CHUNK = 256


class SimplexMoments(NamedTuple):
    measure: float
    centroid: np.ndarray
    inertia: float | np.ndarray


def simplex_moments(vertices) -> SimplexMoments:
    """Measure, centroid and polar (2D) or tensor (3D) inertia of a simplex.

    Uses the closed form ``int r r^T = |E| / ((d+1)(d+2)) sum_i r_i r_i^T``
    with ``r`` measured from the centroid, so there is no quadrature error.
    """
    x = np.asarray(vertices, dtype=float)
    d = x.shape[1]
    if x.shape[0] != d + 1:
        raise ValueError(f"a {d}D simplex needs {d + 1} vertices")
    vol = abs(np.linalg.det(x[1:] - x[0])) / factorial(d)
    scale = max(np.ptp(x, axis=0).prod(), 1e-300)
    if vol <= 1e-14 * scale:
        raise DegenerateElementError("degenerate simplex (zero measure)")
    g = x.mean(axis=0)
    r = x - g
    second = vol / ((d + 1) * (d + 2)) * (r.T @ r)
    if d == 2:
        return SimplexMoments(vol, g, float(np.trace(second)))
    return SimplexMoments(vol, g, np.trace(second) * np.eye(3) - second)


def _batched_moments(mesh: Mesh):
    x = mesh.nodes[mesh.elements]
    d = mesh.dimension
    g = x.mean(axis=1)
    r = x - g[:, None, :]
    second = mesh.measures[:, None, None] / ((d + 1) * (d + 2)) * np.einsum("mai,maj->mij", r, r)
    return g, second


def rigid_fields(r: np.ndarray) -> np.ndarray:
    """Rigid displacement fields at points ``r`` (relative to the centroid).

    Returns ``(..., nr, d)``: translations first, then rotations
    (``N ^ r`` in 2D, ``e_k ^ r`` in 3D).
    """
    d = r.shape[-1]
    if d == 2:
        out = np.zeros(r.shape[:-1] + (3, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 2, 0] = -r[..., 1]
        out[..., 2, 1] = r[..., 0]
        return out
    out = np.zeros(r.shape[:-1] + (6, 3))
    out[..., [0, 1, 2], [0, 1, 2]] = 1.0
    eye = np.eye(3)
    for k in range(3):
        out[..., 3 + k, :] = np.cross(np.broadcast_to(eye[k], r.shape), r)
    return out


def n_rigid(d: int) -> int:
    return 3 if d == 2 else 6


@dataclass(frozen=True, eq=False)
class LocalSpaces:
    """Precomputed degree ``p + k`` element spaces for every element.

    Attributes (``nb`` monomials, ``n = nb * d`` dofs, dof ``b * d + c``):

    * ``stiffness``  ``(m, n, n)`` local stiffness ``int eps(v) : K eps(w)``
    * ``solver``     ``(m, n, n)`` gauge-fixed inverse (top block of the
      bordered matrix inverse)
    * ``traction_load`` ``(m, d+1, nb, d)`` with entries
      ``int_{facet k} phi_b lambda_a``
    * ``mass_load``  ``(m, nb)`` with entries ``int phi_b``
    * ``first_moment`` ``(m, nb, d)`` with entries ``int phi_b (x - G)``
    * ``strain_integral`` ``(m, nv, n)`` with entries ``int B``
    * ``rigid``      ``(m, n, nr)`` rigid modes as coefficient vectors
    """

    mesh: Mesh
    material: Material
    degree: int
    jacobian: np.ndarray
    jinv_t: np.ndarray
    centroid: np.ndarray
    inertia: np.ndarray
    stiffness: np.ndarray = field(repr=False)
    solver: np.ndarray = field(repr=False)
    traction_load: np.ndarray = field(repr=False)
    mass_load: np.ndarray = field(repr=False)
    first_moment: np.ndarray = field(repr=False)
    strain_integral: np.ndarray = field(repr=False)
    rigid: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return len(monomial_exponents(self.mesh.dimension, self.degree))

    @property
    def n_dofs(self) -> int:
        return self.n_basis * self.mesh.dimension

    def reference_points(self, element: int, x: np.ndarray) -> np.ndarray:
        x0 = self.mesh.nodes[self.mesh.elements[element, 0]]
        return (np.asarray(x, dtype=float) - x0) @ self.jinv_t[element]

    def strain_matrix(self, elements: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Strain-displacement matrices ``(len(elements), npts, nv, n)`` at ``xi``.

        ``xi`` holds reference points, either shared ``(npts, d)`` or per
        element ``(len(elements), npts, d)``.
        """
        d = self.mesh.dimension
        elements = np.asarray(elements)
        jt = self.jinv_t[elements]
        if xi.ndim == 2:
            gref = monomial_gradients(xi, self.degree)  # (q, nb, d)
            grad = np.einsum("qbj,mij->mqbi", gref, jt)
        else:
            gref = np.stack([monomial_gradients(p, self.degree) for p in xi])
            grad = np.einsum("mqbj,mij->mqbi", gref, jt)
        return _strain_from_grad(grad, d)

    def stress_at(self, elements: np.ndarray, xi: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Voigt stress ``(len(elements), npts, nv)`` of the fields ``coeffs``."""
        B = self.strain_matrix(elements, xi)
        D = self.material.voigt_stiffness()
        return np.einsum("kl,mqln,mn->mqk", D, B, coeffs)


def _strain_from_grad(grad: np.ndarray, d: int) -> np.ndarray:
    # grad (..., nb, d) of scalar basis -> (..., nv, nb*d)
    nb = grad.shape[-2]
    nv = len(VOIGT[d])
    B = np.zeros(grad.shape[:-2] + (nv, nb, d))
    for k, (i, j) in enumerate(VOIGT[d]):
        if i == j:
            B[..., k, :, i] = grad[..., i]
        else:
            B[..., k, :, i] = grad[..., j]
            B[..., k, :, j] = grad[..., i]
    return B.reshape(grad.shape[:-2] + (nv, nb * d))


def build_local_spaces(mesh: Mesh, material: Material, k: int = 3, p: int = 1,
                       elements: np.ndarray | None = None) -> LocalSpaces:
    """Precompute local spaces of degree ``p + k`` (``1 <= k <= 3``)."""
    if not 1 <= k <= 3:
        raise ValueError("extra degree k must be 1, 2 or 3")
    if elements is not None:
        mesh = Mesh(mesh.nodes, mesh.elements[np.asarray(elements)], {}, None)
    d = mesh.dimension
    q = p + k
    m = mesh.n_elements
    x = mesh.nodes[mesh.elements]
    jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))  # columns = edges
    jinv_t = np.transpose(np.linalg.inv(jac), (0, 2, 1))
    detj = np.abs(np.linalg.det(jac))
    centroid, second = _batched_moments(mesh)
    if d == 2:
        inertia = np.trace(second, axis1=1, axis2=2)
    else:
        inertia = np.trace(second, axis1=1, axis2=2)[:, None, None] * np.eye(3) - second

    exps = monomial_exponents(d, q)
    nb = len(exps)
    n = nb * d
    nr = n_rigid(d)
    D = material.voigt_stiffness()

    # volume rules: stiffness needs degree 2(q-1); loads up to degree q+1
    qp, qw = simplex_quadrature(d, 2 * q)
    phi = monomials(qp, q)  # (nq, nb)
    gref = monomial_gradients(qp, q)  # (nq, nb, d)

    stiffness = np.empty((m, n, n))
    solver = np.empty((m, n, n))
    strain_int = np.empty((m, len(VOIGT[d]), n))
    mass_load = detj[:, None] * (qw @ phi)[None, :]
    xq = x[:, :1, :] + np.einsum("mij,qj->mqi", jac, qp)
    rq = xq - centroid[:, None, :]
    first_moment = np.einsum("m,q,qb,mqi->mbi", detj, qw, phi, rq)

    # rigid modes as coefficient vectors: x - G = (x0 - G) + J xi
    const = int(np.flatnonzero(exps.sum(axis=1) == 0)[0])
    lin = [int(np.flatnonzero((exps == np.eye(d, dtype=int)[j]).all(axis=1))[0]) for j in range(d)]
    rigid = np.zeros((m, nb, d, nr))
    rigid[:, const, np.arange(d), np.arange(d)] = 1.0
    r0 = x[:, 0, :] - centroid  # (m, d)
    # rotation field R_j(r) is linear in r: R_j(r)_c = sum_i A[j, c, i] r_i
    A = rigid_fields(np.eye(d))  # (d, nr, d): field of mode j at r = e_i
    A = np.transpose(A, (1, 2, 0))  # (nr, d(c), d(i))
    for j in range(d, nr):
        rigid[:, const, :, j] = r0 @ A[j].T
        for jj in range(d):
            rigid[:, lin[jj], :, j] = jac[:, :, jj] @ A[j].T
    rigid = rigid.reshape(m, n, nr)

    for s in range(0, m, _CHUNK):
        sl = slice(s, min(s + _CHUNK, m))
        grad = np.einsum("qbj,mij->mqbi", gref, jinv_t[sl])
        B = _strain_from_grad(grad, d)  # (mc, nq, nv, n)
        wq = detj[sl, None] * qw[None, :]
        stiffness[sl] = np.einsum("mq,mqkn,kl,mqlo->mno", wq, B, D, B, optimize=True)
        strain_int[sl] = np.einsum("mq,mqkn->mkn", wq, B)
        # gauge: zero mean displacement and zero mean rotation
        gauge = np.zeros((sl.stop - sl.start, nr, n))
        mean = (wq @ phi)  # (mc, nb)
        for c in range(d):
            gauge[:, c, c::d] = mean
        gint = np.einsum("mq,mqbi->mbi", wq, grad)  # int grad phi_b
        if d == 2:
            gauge[:, 2, 1::2] = gint[:, :, 0]
            gauge[:, 2, 0::2] = -gint[:, :, 1]
        else:
            # curl components: (d_y w_z - d_z w_y, d_z w_x - d_x w_z, d_x w_y - d_y w_x)
            for r, (a, bdir, c1, c2) in enumerate([(1, 2, 2, 1), (2, 0, 0, 2), (0, 1, 1, 0)]):
                gauge[:, 3 + r, c1::3] += gint[:, :, a]
                gauge[:, 3 + r, c2::3] -= gint[:, :, bdir]
        # normalize gauge rows to the stiffness scale for conditioning
        kscale = np.abs(stiffness[sl]).max(axis=(1, 2))
        gscale = np.abs(gauge).max(axis=2, keepdims=True)
        gauge = gauge / gscale * kscale[:, None, None]
        kkt = np.zeros((sl.stop - sl.start, n + nr, n + nr))
        kkt[:, :n, :n] = stiffness[sl]
        kkt[:, :n, n:] = np.transpose(gauge, (0, 2, 1))
        kkt[:, n:, :n] = gauge
        solver[sl] = np.linalg.inv(kkt)[:, :n, :n]

    # facet loads: int_{facet f} phi_b lambda_a
    rules = facet_quadrature(d, q + 1)
    fmeas = _local_facet_measures(x)
    tload = np.empty((m, d + 1, nb, d))
    for f, (pts, w, bary) in enumerate(rules):
        ph = monomials(pts, q)  # (nq, nb)
        ref = np.einsum("q,qb,qa->ba", w, ph, bary) * factorial(d - 1)
        tload[:, f] = fmeas[:, f, None, None] * ref[None]
    return LocalSpaces(mesh, material, q, jac, jinv_t, centroid, inertia, stiffness, solver,
                       tload, mass_load, first_moment, strain_int, rigid)


def _local_facet_measures(x: np.ndarray) -> np.ndarray:
    m, d1, d = x.shape
    out = np.empty((m, d1))
    for f in range(d1):
        v = np.delete(x, f, axis=1)
        e = v[:, 1:, :] - v[:, :1, :]
        if d == 2:
            out[:, f] = np.linalg.norm(e[:, 0], axis=1)
        else:
            out[:, f] = 0.5 * np.linalg.norm(np.cross(e[:, 0], e[:, 1]), axis=1)
    return out


# --------------------------------------------------------------------------
# loads

class BalancedLoad(NamedTuple):
    constant: np.ndarray  # (m, d)
    rotation: np.ndarray  # (m,) in 2D, (m, 3) in 3D


def _traction_resultants(spaces: LocalSpaces, traction: np.ndarray, elems: np.ndarray):
    """Force and moment about G of the element-boundary tractions."""
    mesh = spaces.mesh
    d = mesh.dimension
    x = mesh.nodes[mesh.elements[elems]]
    fmeas = _local_facet_measures(x)
    # facet mass matrix (d nodes): |F| (1 + delta) / (d (d+1))
    M = (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))
    force = np.einsum("mf,mfac->mc", fmeas / d, traction)
    r = x - spaces.centroid[elems][:, None, :]
    moment = np.zeros((len(elems),) if d == 2 else (len(elems), 3))
    for f in range(d + 1):
        rv = np.delete(r, f, axis=1)  # (m, d, d) facet node positions
        # int r x t = sum_ab M_ab r_a x t_b
        tb = np.einsum("ab,mbc->mac", M, traction[:, f])
        if d == 2:
            mom = rv[:, :, 0] * tb[:, :, 1] - rv[:, :, 1] * tb[:, :, 0]
            moment += fmeas[:, f] * mom.sum(axis=1)
        else:
            moment += fmeas[:, f, None] * np.cross(rv, tb).sum(axis=1)
    return force, moment


def balancing_body_force(spaces: LocalSpaces, traction: np.ndarray,
                         elements: np.ndarray | None = None) -> BalancedLoad:
    """Body force ``a + omega ^ (x - G)`` in equilibrium with ``traction``.

    ``a = -(1/|E|) int t`` and ``omega = -I_G^{-1} int (x - G) ^ t``.
    """
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    force, moment = _traction_resultants(spaces, traction, elems)
    a = -force / spaces.mesh.measures[elems, None]
    if spaces.mesh.dimension == 2:
        omega = -moment / spaces.inertia[elems]
    else:
        omega = -np.linalg.solve(spaces.inertia[elems], moment[..., None])[..., 0]
    return BalancedLoad(a, omega)


def load_vectors(spaces: LocalSpaces, traction: np.ndarray, body_constant: np.ndarray,
                 body_rotation: np.ndarray | None = None,
                 elements: np.ndarray | None = None) -> np.ndarray:
    """Right-hand sides ``(m, n)`` of the local problems."""
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    d = spaces.mesh.dimension
    F = np.einsum("mfba,mfac->mbc", spaces.traction_load[elems], traction)
    F += spaces.mass_load[elems][:, :, None] * np.asarray(body_constant)[..., None, :]
    if body_rotation is not None:
        fm = spaces.first_moment[elems]  # int phi_b r_i
        if d == 2:
            rot = np.stack([-fm[:, :, 1], fm[:, :, 0]], axis=-1)
            F += np.asarray(body_rotation)[:, None, None] * rot
        else:
            # int phi_b (omega x r)
            F += np.cross(np.asarray(body_rotation)[:, None, :], fm)
    return F.reshape(len(elems), -1)


def compatibility_residual(spaces: LocalSpaces, F: np.ndarray,
                           elements: np.ndarray | None = None) -> np.ndarray:
    """Work of the load ``F`` on the rigid modes, ``(m, nr)``."""
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    return np.einsum("mnr,mn->mr", spaces.rigid[elems], F)


def _data_scale(spaces, traction, body, elems):
    x = spaces.mesh.nodes[spaces.mesh.elements[elems]]
    fmeas = _local_facet_measures(x)
    tmax = np.abs(traction).max(axis=(2, 3))
    s = (fmeas * tmax).sum(axis=1)
    s = s + spaces.mesh.measures[elems] * np.abs(body).max(axis=-1)
    return np.maximum(s, 1e-300)


def solve_local_neumann(spaces: LocalSpaces, traction: np.ndarray, body_force: np.ndarray,
                        elements: np.ndarray | None = None, body_rotation=None,
                        tol: float = COMPAT_TOL) -> np.ndarray:
    """Displacement coefficients ``(m, n)`` of the local Neumann solutions.

    The stress is ``K eps(w)``.  Data whose resultant or moment exceeds
    ``tol`` times the data scale raises :class:`IncompatibleDataError`.
    """
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    traction = np.asarray(traction, dtype=float)
    body = np.broadcast_to(np.asarray(body_force, dtype=float), (len(elems), spaces.mesh.dimension))
    F = load_vectors(spaces, traction, body, body_rotation, elems)
    res = compatibility_residual(spaces, F, elems)
    d = spaces.mesh.dimension
    h = np.ptp(spaces.mesh.nodes[spaces.mesh.elements[elems]], axis=1).max(axis=1)
    scale = _data_scale(spaces, traction, body, elems)
    rel = np.abs(res[:, :d]).max(axis=1) / scale
    rel = np.maximum(rel, np.abs(res[:, d:]).max(axis=1) / (scale * h))
    bad = np.flatnonzero(rel > tol)
    if len(bad):
        e = int(elems[bad[0]])
        raise IncompatibleDataError(
            f"local data on element {e} is not self-equilibrated (relative residual {rel[bad[0]]:.3e})"
        )
    Z = spaces.solver[elems]
    w = np.einsum("mij,mj->mi", Z, F)
    # one step of iterative refinement against the explicit inverse
    r = F - np.einsum("mij,mj->mi", spaces.stiffness[elems], w)
    return w + np.einsum("mij,mj->mi", Z, r)


def traction_to_stress_operator(spaces: LocalSpaces, elements: np.ndarray | None = None) -> np.ndarray:
    """Linear maps ``(m, n, (d+1) d d)`` from element tractions to coefficients.

    Column ``(f, a, c)`` is the local solution for a unit nodal traction on
    local facet ``f``, node ``a``, component ``c``, loaded together with its
    balancing body force.
    """
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    d = spaces.mesh.dimension
    nt = (d + 1) * d * d
    m = len(elems)
    unit = np.eye(nt).reshape(nt, d + 1, d, d)
    cols = np.empty((m, spaces.n_dofs, nt))
    for j in range(nt):
        t = np.broadcast_to(unit[j], (m, d + 1, d, d))
        bal = balancing_body_force(spaces, t, elems)
        F = load_vectors(spaces, t, bal.constant, bal.rotation, elems)
        cols[:, :, j] = np.einsum("mij,mj->mi", spaces.solver[elems], F)
    return cols


def linear_lift(spaces: LocalSpaces, stress_h: np.ndarray,
                elements: np.ndarray | None = None) -> np.ndarray:
    """Coefficients of ``eps_h (x - x_0)`` whose stress is the constant ``stress_h``."""
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    d = spaces.mesh.dimension
    eps = np.asarray(stress_h) @ spaces.material.voigt_compliance().T
    E = voigt_to_tensor(eps, strain=True)  # (m, d, d)
    exps = monomial_exponents(d, spaces.degree)
    nb = len(exps)
    out = np.zeros((len(elems), nb, d))
    disp = np.einsum("mci,mij->mjc", E, spaces.jacobian[elems])  # row j: field of xi_j
    for j in range(d):
        b = int(np.flatnonzero((exps == np.eye(d, dtype=int)[j]).all(axis=1))[0])
        out[:, b, :] = disp[:, j, :]
    return out.reshape(len(elems), nb * d)


def element_energy(spaces: LocalSpaces, coeffs: np.ndarray, stress_h: np.ndarray,
                   elements: np.ndarray | None = None) -> np.ndarray:
    """``int (sigma(w) - sigma_h) : K^{-1} (sigma(w) - sigma_h)`` per element.

    ``sigma_h`` is lifted into the local space first, so the energy is a
    quadratic form of the difference and stays accurate when it is tiny.
    """
    elems = np.arange(spaces.mesh.n_elements) if elements is None else np.asarray(elements)
    e = np.asarray(coeffs) - linear_lift(spaces, stress_h, elems)
    return np.einsum("mi,mij,mj->m", e, spaces.stiffness[elems], e)
