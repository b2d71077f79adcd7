"""Enhanced tractions: local minimization of the constitutive relation error.

On the selected elements ``E_e`` the vertex (prolongation) conditions are
dropped and the facet tractions on ``J_e`` (all facets of ``E_e``) are
chosen to minimize the CRE over ``E_e``, subject to prescribed tractions and
to rigid-mode equilibrium of every element touching ``J_e``.  Elements
touching ``J_e`` without being selected keep their standard tractions on the
remaining facets, which enter the right-hand side of their equilibrium rows.

For linear FE displacements the traction space on a facet holds only vertex
functions, so the part ``H`` orthogonal to them vanishes and the whole
traction is the optimized part ``R``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elasticity import FESolution, ProblemDef
from .errors import ConfigError, EstimatorError, InfeasibleConstraintsError, RankDeficiencyError
from .linalg import ConstraintBlock, SaddleResult, eliminate_redundant_rows, solve_saddle
from .local_solver import LocalSpaces, traction_to_stress_operator
from .mesh import QualityMetrics, Topology
from .standard import TractionField

CRITERIA = ("radius", "edge", "area", "estimate")


@dataclass(frozen=True, eq=False)
class Selection:
    """Elements ``E_e``, facets ``J_e`` and the touched elements ``E_bar``."""

    elements: np.ndarray
    facets: np.ndarray
    touched: np.ndarray
    criterion: str
    mode: str
    value: float

    @property
    def seam(self) -> np.ndarray:
        """Elements of ``E_bar`` that are not selected."""
        return np.setdiff1d(self.touched, self.elements)

    def __len__(self) -> int:
        return len(self.elements)


def criterion_values(criterion: str, metrics: QualityMetrics | None = None,
                     estimate_ratios: np.ndarray | None = None) -> np.ndarray:
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; choose from {', '.join(CRITERIA)}")
    if criterion == "estimate":
        if estimate_ratios is None:
            raise ConfigError("the estimate criterion needs contributions from a standard run")
        return np.asarray(estimate_ratios, dtype=float)
    if metrics is None:
        raise ConfigError(f"the {criterion} criterion needs mesh quality metrics")
    if criterion == "radius":
        return np.asarray(metrics.radius_ratio)
    return np.asarray(metrics.edge_or_area_ratio)


def selection_order(criterion: str, values: np.ndarray) -> np.ndarray:
    """Element ids from most to least eligible, ties broken by id."""
    ids = np.arange(len(values))
    if criterion == "estimate":
        return np.lexsort((ids, -values))
    return np.lexsort((ids, values))


def _complete(topo: Topology, elements: np.ndarray, criterion: str, mode: str, value: float) -> Selection:
    elements = np.unique(np.asarray(elements, dtype=np.int64))
    facets = np.unique(topo.element_facets[elements]) if len(elements) else np.zeros(0, dtype=np.int64)
    adj = topo.facet_elements[facets].ravel()
    touched = np.unique(adj[adj >= 0])
    return Selection(elements, facets, touched, criterion, mode, float(value))


def select_elements(topo: Topology, criterion: str, *, threshold: float | None = None,
                    fraction: float | None = None, metrics: QualityMetrics | None = None,
                    estimate_ratios: np.ndarray | None = None) -> Selection:
    """Pick ``E_e`` by threshold or by fraction.

    Geometric criteria keep elements with ratio ``<= threshold``; the
    estimate criterion keeps ratio ``>= threshold``.  ``fraction`` keeps the
    ``ceil(fraction * m)`` most eligible elements.
    """
    if (threshold is None) == (fraction is None):
        raise ConfigError("give exactly one of threshold and fraction")
    values = criterion_values(criterion, metrics, estimate_ratios)
    m = topo.mesh.n_elements
    if len(values) != m:
        raise ConfigError(f"criterion has {len(values)} values for {m} elements")
    if fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
        count = min(m, math.ceil(fraction * m - 1e-9))
        chosen = selection_order(criterion, values)[:count]
        return _complete(topo, chosen, criterion, "fraction", fraction)
    if criterion == "estimate":
        chosen = np.flatnonzero(values >= threshold)
    else:
        chosen = np.flatnonzero(values <= threshold)
    return _complete(topo, chosen, criterion, "threshold", threshold)


def seam_facet_counts(selection: Selection, topo: Topology) -> np.ndarray:
    """Number of ``J_e`` facets touching each seam element."""
    seam = selection.seam
    return np.isin(topo.element_facets[seam], selection.facets).sum(axis=1)


# --------------------------------------------------------------------------

def compute_H(selection: Selection, d: int, p: int = 1) -> np.ndarray:
    """Part of the tractions orthogonal to vertex functions on ``J_e``.

    With linear facet tractions every basis function is a vertex function,
    so the orthogonality conditions force this part to zero.
    """
    if p != 1:
        raise ConfigError(f"FE degree p={p} is not supported (only p=1)")
    return np.zeros((len(selection.facets), d, d))


@dataclass(eq=False)
class QPSystem:
    """``min 1/2 r^T A r - r^T B`` over the traction dofs of ``J_e``.

    Dof ``(k * d + a) * d + c``: node ``a`` (sorted), component ``c`` of
    facet ``selection.facets[k]``.
    """

    selection: Selection
    A: sp.csr_matrix
    B: np.ndarray
    C: ConstraintBlock | None = None
    L: ConstraintBlock | None = None
    L_full: ConstraintBlock | None = None
    P: ConstraintBlock | None = None
    row_elements: np.ndarray | None = None
    multipliers: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return len(self.B)

    def blocks(self) -> list[ConstraintBlock]:
        return [b for b in (self.C, self.P, self.L) if b is not None and b.n_rows]


def _local_dof_map(selection: Selection, topo: Topology, elements: np.ndarray):
    """Global QP index and sign of every local traction dof ``(f, a, c)``.

    Returns ``(idx, sign)`` of shape ``(m, (d+1) d d)``; ``idx`` is ``-1``
    for facets outside ``J_e``.
    """
    d = topo.mesh.dimension
    pos = -np.ones(topo.n_facets, dtype=np.int64)
    pos[selection.facets] = np.arange(len(selection.facets))
    fid = topo.element_facets[elements]  # (m, d+1)
    k = pos[fid]
    perm = topo.element_facet_perm[elements]  # (m, d+1, d)
    idx = ((k[:, :, None] * d + perm)[..., None] * d + np.arange(d)).reshape(len(elements), -1)
    inside = np.repeat(k >= 0, d * d, axis=1)
    idx = np.where(inside, idx, -1)
    sign = np.repeat(topo.element_signs[elements], d * d, axis=1).astype(float)
    return idx, sign


def assemble_qp(selection: Selection, H: np.ndarray, fe: FESolution, spaces: LocalSpaces,
                topo: Topology, operators: np.ndarray | None = None) -> QPSystem:
    """Objective ``1/2 |sigma_R(r)|^2 - (sigma_R(r), sigma_h - sigma_H)``.

    ``operators`` are the traction-to-coefficient maps of the selected
    elements; they are computed when not given.
    """
    d = topo.mesh.dimension
    n = len(selection.facets) * d * d
    el = selection.elements
    if len(el) == 0:
        return QPSystem(selection, sp.csr_matrix((0, 0)), np.zeros(0))
    if np.any(H):
        raise EstimatorError("nonzero H part is not supported for linear tractions")
    W = traction_to_stress_operator(spaces, el) if operators is None else operators
    if W.shape[0] != len(el):
        raise EstimatorError("missing local operator for some selected elements")
    K = spaces.stiffness[el]
    S = np.einsum("mni,mnk,mkj->mij", W, K, W, optimize=True)
    fh = np.einsum("mkn,mk->mn", spaces.strain_integral[el], fe.stress[el])
    b = np.einsum("mni,mn->mi", W, fh)
    idx, sign = _local_dof_map(selection, topo, el)
    ss = sign[:, :, None] * sign[:, None, :] * S
    rows = np.repeat(idx, idx.shape[1], axis=1).ravel()
    cols = np.tile(idx, (1, idx.shape[1])).ravel()
    A = sp.coo_matrix((ss.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A = (A + A.T) * 0.5
    B = np.zeros(n)
    np.add.at(B, idx.ravel(), (sign * b).ravel())
    return QPSystem(selection, A, B)


def _rigid_work(spaces: LocalSpaces, elements: np.ndarray) -> np.ndarray:
    """``G[m, s, (f, a, c)]``: work of a unit nodal traction on rigid mode ``s``."""
    d = spaces.mesh.dimension
    rig = spaces.rigid[elements].reshape(len(elements), -1, d, spaces.rigid.shape[-1])  # (m, nb, d, nr)
    G = np.einsum("mbcs,mfba->msfac", rig, spaces.traction_load[elements])
    return G.reshape(len(elements), rig.shape[-1], -1)


def assemble_constraints(qp: QPSystem, H: np.ndarray, standard: TractionField, prob: ProblemDef,
                         spaces: LocalSpaces, topo: Topology) -> QPSystem:
    """Add the Neumann block ``C`` and the reduced equilibrium block ``L``."""
    sel = qp.selection
    d = topo.mesh.dimension
    n = qp.n_dofs
    if n == 0:
        qp.C = ConstraintBlock(np.zeros((0, 0)), np.zeros(0), "C")
        qp.L = ConstraintBlock(np.zeros((0, 0)), np.zeros(0), "L")
        qp.P = ConstraintBlock(np.zeros((0, 0)), np.zeros(0), "P")
        return qp
    # C: prescribed components on J_e
    _, prescribed, traction = prob.facet_data(topo)
    k, c = np.nonzero(prescribed[sel.facets])
    cols = ((k[:, None] * d + np.arange(d)) * d + c[:, None]).ravel()
    vals = np.repeat(traction[sel.facets[k], c], d) - H[np.repeat(k, d), np.tile(np.arange(d), len(k)),
                                                         np.repeat(c, d)]
    C = ConstraintBlock(sp.csr_matrix((np.ones(len(cols)), (np.arange(len(cols)), cols)),
                                      shape=(len(cols), n)), vals, "C")

    # L: rigid-mode equilibrium of every element touching J_e
    elems = sel.touched
    G = _rigid_work(spaces, elems)  # (m, nr, nt)
    idx, sign = _local_dof_map(sel, topo, elems)
    inside = idx >= 0
    t_std = standard.element_tractions(elems).reshape(len(elems), -1)
    body = np.asarray(prob.body_force)
    rig = spaces.rigid[elems].reshape(len(elems), -1, d, spaces.rigid.shape[-1])
    body_work = np.einsum("mbcs,mb,c->ms", rig, spaces.mass_load[elems], body)
    rhs = -body_work - np.einsum("msj,mj->ms", G, np.where(inside, 0.0, t_std))
    nr = G.shape[1]
    r_rows = np.repeat(np.arange(len(elems) * nr).reshape(len(elems), nr)[:, :, None], idx.shape[1], axis=2)
    vals = G * sign[:, None, :]
    mask = np.broadcast_to(inside[:, None, :], G.shape)
    L = sp.csr_matrix((vals[mask], (r_rows[mask], np.broadcast_to(idx[:, None, :], G.shape)[mask])),
                      shape=(len(elems) * nr, n))
    L_full = ConstraintBlock(L, rhs.ravel(), "L")
    try:
        L_red = eliminate_redundant_rows(L_full, basis=C if C.n_rows else None)
    except InfeasibleConstraintsError as exc:
        row = int(str(exc).split("redundant row ")[1].split()[0]) if "redundant row " in str(exc) else 0
        raise InfeasibleConstraintsError(
            f"enhanced equilibrium rows are inconsistent at element {int(elems[row // nr])}: {exc}"
        ) from exc
    qp.C, qp.L, qp.L_full = C, L_red, L_full
    qp.P = ConstraintBlock(np.zeros((0, n)), np.zeros(0), "P")
    qp.row_elements = np.repeat(elems, nr)
    return qp


@dataclass(frozen=True, eq=False)
class HRDecomposition:
    facets: np.ndarray
    H: np.ndarray
    R: np.ndarray

    @property
    def F(self) -> np.ndarray:
        return self.H + self.R


def solve_enhanced(qp: QPSystem, H: np.ndarray, standard: TractionField,
                   prob: ProblemDef) -> tuple[HRDecomposition, TractionField, SaddleResult | None]:
    """Solve the saddle system and merge ``H + R`` into the standard field."""
    sel = qp.selection
    topo = standard.topology
    d = topo.mesh.dimension
    if qp.n_dofs == 0:
        empty = np.zeros((0, d, d))
        merged = TractionField(topo, standard.values.copy(), standard.prescribed, "enhanced", sel)
        return HRDecomposition(sel.facets, empty, empty), merged, None
    try:
        res = solve_saddle(qp.A, qp.B, qp.blocks())
    except RankDeficiencyError as exc:
        raise type(exc)(
            f"enhanced QP ({sel.criterion}, {len(sel)} elements): {exc}"
        ) from exc
    qp.multipliers = res.multipliers
    R = res.primal.reshape(-1, d, d)
    values = standard.values.copy()
    values[sel.facets] = H + R
    _, prescribed, traction = prob.facet_data(topo)
    values = np.where(prescribed[:, None, :], traction[:, None, :], values)
    merged = TractionField(topo, values, standard.prescribed, "enhanced", sel)
    return HRDecomposition(sel.facets, H, R), merged, res
