"""Isotropic linear elasticity with P1 displacements.

Stress and strain live in Voigt storage: ``(xx, yy, xy)`` in 2D and
``(xx, yy, zz, yz, xz, xy)`` in 3D.  Strains use engineering shear
(``gamma = 2 eps``) so that ``sigma = D @ eps`` and ``sigma . eps`` is the
energy density.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NestingError, RigidModeError, EstimatorError
from .mesh import Mesh, Topology, barycentric_gradients

VOIGT = {2: [(0, 0), (1, 1), (0, 1)], 3: [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]}


@dataclass(frozen=True)
class Material:
    young_modulus: float = 1.0
    poisson_ratio: float = 0.3
    mode: str = "plane_stress"

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ConfigError(f"Young's modulus must be positive, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ConfigError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}")
        if self.mode not in ("plane_stress", "3d"):
            raise ConfigError(f"unknown material mode {self.mode!r}")

    @property
    def dimension(self) -> int:
        return 2 if self.mode == "plane_stress" else 3

    @property
    def lame(self) -> tuple[float, float]:
        """Lame parameters of the (plane-stress reduced) law."""
        e, nu = self.young_modulus, self.poisson_ratio
        mu = e / (2.0 * (1.0 + nu))
        if self.mode == "plane_stress":
            return e * nu / (1.0 - nu ** 2), mu
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), mu

    def voigt_stiffness(self) -> np.ndarray:
        lam, mu = self.lame
        d = self.dimension
        nv = len(VOIGT[d])
        D = np.zeros((nv, nv))
        D[:d, :d] = lam
        D[np.arange(d), np.arange(d)] += 2.0 * mu
        D[np.arange(d, nv), np.arange(d, nv)] = mu
        return D

    def voigt_compliance(self) -> np.ndarray:
        return np.linalg.inv(self.voigt_stiffness())

    def tensor(self) -> np.ndarray:
        """Fourth-order stiffness ``C[i, j, k, l]``."""
        lam, mu = self.lame
        d = self.dimension
        I = np.eye(d)
        return (lam * np.einsum("ij,kl->ijkl", I, I)
                + mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))


def tensor_to_voigt(t: np.ndarray, strain: bool = False) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    d = t.shape[-1]
    out = np.stack([t[..., i, j] for i, j in VOIGT[d]], axis=-1)
    if strain:
        out[..., d:] *= 2.0
    return out


def voigt_to_tensor(v: np.ndarray, strain: bool = False) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    d = 2 if v.shape[-1] == 3 else 3
    t = np.zeros(v.shape[:-1] + (d, d))
    for k, (i, j) in enumerate(VOIGT[d]):
        val = v[..., k] * (0.5 if strain and i != j else 1.0)
        t[..., i, j] = val
        t[..., j, i] = val
    return t


def hooke_apply(material: Material, strain: np.ndarray) -> np.ndarray:
    """Stress tensor for a (symmetric) strain tensor."""
    eps = np.asarray(strain, dtype=float)
    sig = tensor_to_voigt(eps, strain=True) @ material.voigt_stiffness().T
    return voigt_to_tensor(sig)


@dataclass(frozen=True)
class ProblemDef:
    """Loads and supports.

    ``dirichlet`` maps a boundary label to a prescribed displacement with one
    entry per component; ``None`` leaves that component free (used for
    symmetry planes).  ``neumann`` maps labels to a constant traction.  Any
    boundary facet component that is not constrained carries a prescribed
    traction: the Neumann value for its label, else zero.
    """

    material: Material
    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)
    body_force: tuple = ()

    def __post_init__(self):
        d = self.material.dimension
        if not self.dirichlet:
            raise ConfigError("at least one Dirichlet boundary is required")
        overlap = set(self.dirichlet) & set(self.neumann)
        if overlap:
            raise ConfigError(f"labels both Dirichlet and Neumann: {sorted(overlap)}")
        dir_ = {}
        for lab, val in self.dirichlet.items():
            val = tuple(None if v is None else float(v) for v in val)
            if len(val) != d:
                raise ConfigError(f"Dirichlet value for {lab!r} needs {d} components")
            dir_[lab] = val
        neu = {}
        for lab, val in self.neumann.items():
            val = np.asarray(val, dtype=float)
            if val.shape != (d,):
                raise ConfigError(f"traction for {lab!r} needs {d} components")
            neu[lab] = tuple(val)
        bf = tuple(float(v) for v in self.body_force) if len(self.body_force) else (0.0,) * d
        if len(bf) != d:
            raise ConfigError(f"body force needs {d} components")
        object.__setattr__(self, "dirichlet", dir_)
        object.__setattr__(self, "neumann", neu)
        object.__setattr__(self, "body_force", bf)

    def check_labels(self, mesh: Mesh) -> None:
        missing = (set(self.dirichlet) | set(self.neumann)) - mesh.labels()
        if missing:
            raise ConfigError(f"boundary labels not found in mesh: {sorted(missing)}")
        if mesh.dimension != self.material.dimension:
            raise ConfigError(
                f"{mesh.dimension}D mesh used with material mode {self.material.mode!r}"
            )

    def facet_data(self, topo: Topology):
        """Per-facet boundary data.

        Returns ``(fixed, traction_mask, traction)``: boolean ``(nf, d)``
        masks of Dirichlet-constrained and traction-prescribed components and
        the ``(nf, d)`` prescribed traction (zero where not prescribed).
        Interior facets have both masks false.
        """
        nf, d = topo.n_facets, topo.mesh.dimension
        fixed = np.zeros((nf, d), dtype=bool)
        traction = np.zeros((nf, d))
        for f in np.flatnonzero(topo.boundary):
            lab = topo.facet_labels[f]
            if lab in self.dirichlet:
                fixed[f] = [v is not None for v in self.dirichlet[lab]]
            elif lab in self.neumann:
                traction[f] = self.neumann[lab]
        prescribed = topo.boundary[:, None] & ~fixed
        return fixed, prescribed, traction


@dataclass(frozen=True, eq=False)
class FESolution:
    mesh: Mesh
    problem: ProblemDef
    displacement: np.ndarray  # (n_nodes, d)
    strain: np.ndarray  # (n_elements, nv), engineering shear
    stress: np.ndarray  # (n_elements, nv)
    stiffness: sp.csr_matrix = field(repr=False)
    load: np.ndarray = field(repr=False)
    fixed_dofs: np.ndarray = field(repr=False)

    @property
    def energy_norm(self) -> float:
        u = self.displacement.ravel()
        return float(np.sqrt(max(u @ (self.stiffness @ u), 0.0)))


def strain_matrices(mesh: Mesh, grads: np.ndarray | None = None) -> np.ndarray:
    """P1 strain-displacement matrices ``(m, nv, d*(d+1))``."""
    g = barycentric_gradients(mesh) if grads is None else grads
    d = mesh.dimension
    m, nn = g.shape[0], d + 1
    nv = len(VOIGT[d])
    B = np.zeros((m, nv, d * nn))
    for k, (i, j) in enumerate(VOIGT[d]):
        if i == j:
            B[:, k, i::d] = g[:, :, i]
        else:
            B[:, k, i::d] = g[:, :, j]
            B[:, k, j::d] = g[:, :, i]
    return B


def element_stiffness(mesh: Mesh, material: Material) -> np.ndarray:
    B = strain_matrices(mesh)
    D = material.voigt_stiffness()
    return mesh.measures[:, None, None] * np.einsum("mki,kl,mlj->mij", B, D, B)


def assemble_stiffness(mesh: Mesh, material: Material) -> sp.csr_matrix:
    d = mesh.dimension
    ke = element_stiffness(mesh, material)
    dofs = (mesh.elements[:, :, None] * d + np.arange(d)).reshape(mesh.n_elements, -1)
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    n = mesh.n_nodes * d
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_load(mesh: Mesh, topo: Topology, prob: ProblemDef) -> np.ndarray:
    d = mesh.dimension
    f = np.zeros((mesh.n_nodes, d))
    body = np.asarray(prob.body_force)
    if np.any(body):
        share = mesh.measures / (d + 1)
        for k in range(d + 1):
            np.add.at(f, mesh.elements[:, k], share[:, None] * body)
    _, prescribed, traction = prob.facet_data(topo)
    tr = np.where(prescribed, traction, 0.0)
    bnd = np.flatnonzero(np.any(tr != 0, axis=1))
    for k in range(d):
        np.add.at(f, topo.facets[bnd, k], (topo.facet_measures[bnd] / d)[:, None] * tr[bnd])
    return f.ravel()


def dirichlet_values(mesh: Mesh, topo: Topology, prob: ProblemDef):
    d = mesh.dimension
    vals = {}
    for f in np.flatnonzero(topo.boundary):
        lab = topo.facet_labels[f]
        if lab in prob.dirichlet:
            for c, v in enumerate(prob.dirichlet[lab]):
                if v is not None:
                    for node in topo.facets[f]:
                        vals[int(node) * d + c] = v
    dofs = np.array(sorted(vals), dtype=np.int64)
    return dofs, np.array([vals[k] for k in dofs])


def assemble_solve(mesh: Mesh, topo: Topology, prob: ProblemDef) -> FESolution:
    """Galerkin P1 solution with Dirichlet dofs eliminated."""
    prob.check_labels(mesh)
    d = mesh.dimension
    K = assemble_stiffness(mesh, prob.material)
    F = assemble_load(mesh, topo, prob)
    n = K.shape[0]
    fixed, uval = dirichlet_values(mesh, topo, prob)
    free = np.setdiff1d(np.arange(n), fixed)
    u = np.zeros(n)
    u[fixed] = uval
    rhs = F[free] - K[free][:, fixed] @ uval
    kff = K[free][:, free].tocsc()
    try:
        lu = spla.splu(kff)
        u[free] = lu.solve(rhs)
    except RuntimeError as exc:
        raise RigidModeError(f"stiffness matrix is singular: {exc}") from exc
    piv = np.abs(lu.U.diagonal())
    if len(piv) and piv.min() <= 1e-12 * piv.max():
        raise RigidModeError("stiffness matrix is singular: Dirichlet data leaves a rigid mode free")
    if not np.all(np.isfinite(u)):
        raise RigidModeError("stiffness matrix is singular (non-finite displacement)")
    res = kff @ u[free] - rhs
    scale = max(np.abs(rhs).max(), np.abs(K @ u).max(), 1e-300)
    if np.abs(res).max() > 1e-8 * scale:
        raise RigidModeError("stiffness matrix is numerically singular: Dirichlet data leaves rigid modes")
    disp = u.reshape(-1, d)
    B = strain_matrices(mesh)
    ue = disp[mesh.elements].reshape(mesh.n_elements, -1)
    strain = np.einsum("mki,mi->mk", B, ue)
    stress = strain @ prob.material.voigt_stiffness().T
    return FESolution(mesh, prob, disp, strain, stress, K, F, fixed)


# --------------------------------------------------------------------------
# energy norms

def energy_norm_u(mesh: Mesh, material: Material, displacement: np.ndarray) -> float:
    u = np.asarray(displacement, dtype=float).ravel()
    K = assemble_stiffness(mesh, material)
    return float(np.sqrt(max(u @ (K @ u), 0.0)))


def element_energy_u(mesh: Mesh, material: Material, displacement: np.ndarray) -> np.ndarray:
    """Squared energy norm of a P1 field on each element."""
    d = mesh.dimension
    disp = np.asarray(displacement, dtype=float).reshape(-1, d)
    B = strain_matrices(mesh)
    eps = np.einsum("mki,mi->mk", B, disp[mesh.elements].reshape(mesh.n_elements, -1))
    return mesh.measures * np.einsum("mk,kl,ml->m", eps, material.voigt_stiffness(), eps)


def energy_norm_sigma(mesh: Mesh, material: Material, stress: np.ndarray,
                      weights: np.ndarray | None = None) -> float:
    """Complementary energy norm of a stress field.

    ``stress`` is either per-element constant ``(m, nv)`` or sampled at
    quadrature points ``(m, nq, nv)``; in the latter case ``weights``
    ``(m, nq)`` are the physical quadrature weights.
    """
    C = material.voigt_compliance()
    s = np.asarray(stress, dtype=float)
    if s.ndim == 2:
        val = np.sum(mesh.measures * np.einsum("mk,kl,ml->m", s, C, s))
    else:
        val = np.sum(weights * np.einsum("mqk,kl,mql->mq", s, C, s))
    return float(np.sqrt(max(val, 0.0)))


# --------------------------------------------------------------------------
# reference error on nested meshes

class ReferenceError_(NamedTuple):
    value: float
    shortcut: float
    direct: float
    per_element: np.ndarray  # squared contributions on coarse elements


def prolongate(coarse: Mesh, fine: Mesh, displacement: np.ndarray) -> np.ndarray:
    """Nodal interpolation of a coarse P1 field on a nested refinement."""
    if fine.parent is None or len(fine.parent) != fine.n_elements:
        raise NestingError("fine mesh carries no parent map; build it with uniform_refine")
    if fine.parent.max() >= coarse.n_elements or fine.n_nodes < coarse.n_nodes:
        raise NestingError("fine mesh is not a refinement of the coarse mesh")
    if not np.allclose(fine.nodes[:coarse.n_nodes], coarse.nodes, rtol=0, atol=1e-12 * np.ptp(coarse.nodes)):
        raise NestingError("coarse nodes are not preserved by the fine mesh")
    d = coarse.dimension
    disp = np.asarray(displacement, dtype=float).reshape(-1, d)
    out = np.zeros((fine.n_nodes, d))
    par = coarse.elements[fine.parent]
    x0 = coarse.nodes[par[:, 0]]
    jac = np.transpose(coarse.nodes[par[:, 1:]] - x0[:, None, :], (0, 2, 1))
    jinv = np.linalg.inv(jac)
    for k in range(d + 1):
        xf = fine.nodes[fine.elements[:, k]]
        lam = np.einsum("mij,mj->mi", jinv, xf - x0)
        bary = np.hstack([1.0 - lam.sum(axis=1, keepdims=True), lam])
        if np.any(bary < -1e-9):
            raise NestingError("fine element lies outside its parent")
        out[fine.elements[:, k]] = np.einsum("mi,mic->mc", bary, disp[par])
    return out


def reference_error(coarse: FESolution, fine: FESolution) -> ReferenceError_:
    """Energy-norm error of ``coarse`` measured against a nested ``fine`` solve.

    On nested spaces Galerkin orthogonality gives
    ``|u_ref - P u_h|^2 = |u_ref|^2 - |u_h|^2``.  ``direct`` integrates the
    left-hand side on the fine mesh (``per_element`` holds its squared
    contributions on the coarse elements); ``shortcut`` evaluates the
    right-hand side.  The shortcut is first order in round-off, so the
    reported ``value`` is the direct one and the shortcut serves as a check.
    """
    if fine.mesh is coarse.mesh:
        z = np.zeros(coarse.mesh.n_elements)
        return ReferenceError_(0.0, 0.0, 0.0, z)
    interp = prolongate(coarse.mesh, fine.mesh, coarse.displacement)
    mat = coarse.problem.material
    diff = fine.displacement - interp
    el = element_energy_u(fine.mesh, mat, diff)
    per = np.bincount(fine.mesh.parent, weights=el, minlength=coarse.mesh.n_elements)
    direct = float(np.sqrt(max(per.sum(), 0.0)))
    rad = fine.energy_norm ** 2 - coarse.energy_norm ** 2
    scale = max(fine.energy_norm ** 2, 1e-300)
    if rad < -1e-12 * scale:
        raise EstimatorError(f"reference energy below coarse energy (radicand {rad:.3e})")
    shortcut = float(np.sqrt(max(rad, 0.0)))
    return ReferenceError_(direct, shortcut, direct, per)
