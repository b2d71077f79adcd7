"""Standard construction of equilibrated tractions by vertex star-patch problems.

Tractions are linear on each facet and stored as nodal values at the sorted
facet nodes, ``values[f, a, c]``, relative to the normal of the facet's
``eta = +1`` element.  For every vertex ``i`` a small least-squares problem
finds the contribution ``lambda_i F^(i)`` on the facets around ``i``; the
traction on a facet is the sum of the contributions of its vertices.

Each patch element ``E`` yields one vector equation per vertex ``j`` of
``E``: with the test field ``lambda_j c``,

    sum_{G in dE, i in G} eta_E int_G lambda_i F^(i) . lambda_j c
        = delta_ij int_E (sigma_h : eps(lambda_i c) - f_d . lambda_i c).

Summed over patches these are the energy conditions of the strong
prolongation, so the assembled tractions balance force and moment on every
element.  On facets with prescribed traction the contribution is pinned to
the dual-basis share of ``F_d``; the same dual-basis share of the FE
traction is the least-squares target.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elasticity import FESolution, ProblemDef, voigt_to_tensor
from .errors import EqBoundError, InfeasibleConstraintsError, RankDeficiencyError
from .linalg import ConstraintBlock, redundant_rows_dense, solve_saddle_dense
from .mesh import Topology, barycentric_gradients


def facet_mass(d: int) -> np.ndarray:
    """Reference P1 mass matrix of a facet (multiply by the facet measure)."""
    return (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))


def dual_shares(d: int) -> np.ndarray:
    """``S[a, i]``: nodal values of the dual function of node ``i``.

    A constant ``g`` on a facet splits into ``sum_i g S[:, i]`` with
    ``int (g S[:, i]) lambda_j = delta_ij int g lambda_j``.
    """
    return np.linalg.inv(facet_mass(d)) / d


@dataclass(frozen=True, eq=False)
class TractionField:
    """Linear facet tractions.

    ``values[f, a, c]`` is the traction at sorted node ``a`` of facet ``f``;
    ``prescribed[f, c]`` flags boundary components carrying ``F_d``.
    """

    topology: Topology
    values: np.ndarray
    prescribed: np.ndarray
    provenance: str = "standard"
    selection: object = field(default=None, repr=False)

    def element_tractions(self, elements: np.ndarray | None = None) -> np.ndarray:
        """Outward tractions ``(m, d+1, d, d)`` in local facet/node order."""
        topo = self.topology
        el = np.arange(topo.mesh.n_elements) if elements is None else np.asarray(elements)
        fid = topo.element_facets[el]
        perm = topo.element_facet_perm[el]
        vals = self.values[fid[:, :, None], perm]  # (m, d+1, d, d)
        return topo.element_signs[el][:, :, None, None] * vals

    def resultant(self) -> np.ndarray:
        """Facet resultants ``int_G F`` of shape ``(nf, d)``."""
        d = self.values.shape[1]
        return self.topology.facet_measures[:, None] * self.values.sum(axis=1) / d


# --------------------------------------------------------------------------
# targets

def fe_traction_target(topo: Topology, fe: FESolution, prob: ProblemDef,
                       facets: np.ndarray | None = None) -> np.ndarray:
    """Constant FE traction ``(nf, d)`` used as least-squares target.

    Interior facets take the mean of the two one-sided stress vectors on the
    ``eta = +1`` normal; boundary facets take ``F_d`` on prescribed
    components and the one-sided stress vector on constrained ones.
    """
    f = np.arange(topo.n_facets) if facets is None else np.asarray(facets)
    sig = voigt_to_tensor(fe.stress)
    n = topo.facet_normals[f]
    e0, e1 = topo.facet_elements[f, 0], topo.facet_elements[f, 1]
    t0 = np.einsum("fij,fj->fi", sig[e0], n)
    t1 = np.einsum("fij,fj->fi", sig[np.maximum(e1, 0)], n)
    out = np.where((e1 >= 0)[:, None], 0.5 * (t0 + t1), t0)
    _, prescribed, traction = prob.facet_data(topo)
    return np.where(prescribed[f], traction[f], out)


# --------------------------------------------------------------------------
# patch problems

@dataclass(frozen=True, eq=False)
class PatchSystem:
    """Least-squares problem of one vertex patch.

    Unknown ``(k * d + a) * d + c``: contribution at sorted node ``a``,
    component ``c`` of patch facet ``facets[k]``.
    """

    vertex: int
    facets: np.ndarray
    elements: np.ndarray
    equilibrium: ConstraintBlock
    neumann: ConstraintBlock
    metric: np.ndarray
    target: np.ndarray

    @property
    def n_unknowns(self) -> int:
        return len(self.target)


def _element_rhs(topo: Topology, fe: FESolution, prob: ProblemDef, grads=None) -> np.ndarray:
    """``Q[e, j, c] = int_E sigma_h : eps(lambda_j e_c) - f_d . lambda_j e_c``."""
    mesh = topo.mesh
    g = barycentric_gradients(mesh) if grads is None else grads
    sig = voigt_to_tensor(fe.stress)
    vol = mesh.measures
    q = vol[:, None, None] * np.einsum("mcj,maj->mac", sig, g)
    q -= (vol / (mesh.dimension + 1))[:, None, None] * np.asarray(prob.body_force)[None, None, :]
    return q


def build_patch_system(vertex: int, fe: FESolution, topo: Topology, prob: ProblemDef,
                       _cache: dict | None = None) -> PatchSystem:
    """Assemble the patch problem of ``vertex``."""
    cache = _cache if _cache is not None else _patch_cache(topo, fe, prob)
    mesh = topo.mesh
    d = mesh.dimension
    i = int(vertex)
    facets = topo.patch_facets(i)
    elems = topo.patch_elements(i)
    nk = len(facets)
    n = nk * d * d
    local = {int(f): k for k, f in enumerate(facets)}
    M = facet_mass(d)
    S = dual_shares(d)

    rows, rhs = [], []
    for e in elems:
        verts = mesh.elements[e]
        for j_loc, j in enumerate(verts):
            block = np.zeros((d, n))
            for kf in range(d + 1):
                if verts[kf] == i:  # facet opposite i does not contain i
                    continue
                f = int(topo.element_facets[e, kf])
                fverts = topo.facets[f]
                if j not in fverts:
                    continue
                pj = int(np.flatnonzero(fverts == j)[0])
                k = local[f]
                coef = topo.element_signs[e, kf] * topo.facet_measures[f] * M[:, pj]
                for c in range(d):
                    block[c, (k * d + np.arange(d)) * d + c] += coef
            rows.append(block)
            rhs.append(cache["q"][e, j_loc] if j == i else np.zeros(d))
    eq = ConstraintBlock(np.vstack(rows), np.concatenate(rhs), label="L")

    pin_rows, pin_rhs = [], []
    target = np.zeros((nk, d, d))
    metric = np.zeros((n, n))
    prescribed, traction, ftarget = cache["prescribed"], cache["traction"], cache["target"]
    for k, f in enumerate(facets):
        pi = int(np.flatnonzero(topo.facets[f] == i)[0])
        target[k] = S[:, pi, None] * ftarget[f][None, :]
        mk = topo.facet_measures[f] * M
        for c in range(d):
            idx = (k * d + np.arange(d)) * d + c
            metric[np.ix_(idx, idx)] = mk
            if prescribed[f, c]:
                for a in range(d):
                    row = np.zeros(n)
                    row[idx[a]] = 1.0
                    pin_rows.append(row)
                    pin_rhs.append(S[a, pi] * traction[f, c])
    pins = ConstraintBlock(
        np.array(pin_rows).reshape(-1, n), np.array(pin_rhs, dtype=float), label="C"
    )
    return PatchSystem(i, facets, elems, eq, pins, metric, target.ravel())


def _patch_cache(topo: Topology, fe: FESolution, prob: ProblemDef) -> dict:
    _, prescribed, traction = prob.facet_data(topo)
    return {
        "q": _element_rhs(topo, fe, prob),
        "prescribed": prescribed,
        "traction": traction,
        "target": fe_traction_target(topo, fe, prob),
    }


def solve_patch(system: PatchSystem) -> np.ndarray:
    """Contributions ``(n_facets, d, d)`` minimizing the facet L2 gap to the target."""
    d = int(round(np.sqrt(system.n_unknowns / len(system.facets))))
    pins = system.neumann
    pm = pins.matrix.toarray()
    L = system.equilibrium.matrix.toarray()
    try:
        kept = redundant_rows_dense(L, system.equilibrium.rhs, "L",
                                    basis=(pm, pins.rhs) if pins.n_rows else None)
    except InfeasibleConstraintsError as exc:
        raise InfeasibleConstraintsError(f"patch of vertex {system.vertex}: {exc}") from exc
    c = np.vstack([pm, L[kept]])
    q = np.concatenate([pins.rhs, system.equilibrium.rhs[kept]])
    try:
        x, _ = solve_saddle_dense(system.metric, system.metric @ system.target, c, q)
    except RankDeficiencyError as exc:
        raise RankDeficiencyError(f"patch of vertex {system.vertex}: {exc}") from exc
    return x.reshape(len(system.facets), d, d)


def assemble_tractions(contributions: dict, topo: Topology, prob: ProblemDef,
                       provenance: str = "standard") -> TractionField:
    """Sum patch contributions facet by facet (fixed vertex order).

    Components carrying a prescribed traction are then set to ``F_d``
    exactly; they already agree with it to round-off.
    """
    d = topo.mesh.dimension
    values = np.zeros((topo.n_facets, d, d))
    touched = np.zeros((topo.n_facets, d), dtype=int)
    for v in sorted(contributions):
        facets, vals = contributions[v]
        values[facets] += vals
        for k, f in enumerate(facets):
            touched[f, int(np.flatnonzero(topo.facets[f] == v)[0])] += 1
    if np.any(touched != 1):
        f = int(np.argwhere(touched != 1)[0, 0])
        raise EqBoundError(f"missing patch solution for a vertex of facet {f}")
    _, prescribed, traction = prob.facet_data(topo)
    values = np.where(prescribed[:, None, :], traction[:, None, :], values)
    return TractionField(topo, values, prescribed, provenance)


def standard_tractions(fe: FESolution, topo: Topology, prob: ProblemDef) -> TractionField:
    """Solve every vertex patch and assemble the standard traction field."""
    cache = _patch_cache(topo, fe, prob)
    contributions = {}
    for v in range(topo.mesh.n_nodes):
        if topo.patch_ptr[v + 1] == topo.patch_ptr[v]:
            continue
        system = build_patch_system(v, fe, topo, prob, cache)
        contributions[v] = (system.facets, solve_patch(system))
    return assemble_tractions(contributions, topo, prob)


# --------------------------------------------------------------------------
# equilibrium checks

def equilibrium_residuals(tractions: TractionField, prob: ProblemDef,
                          elements: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Force and moment (about the centroid) residual norms per element.

    ``|int_dE eta F + int_E f_d|`` and ``|int_dE (x - G) ^ eta F|``; a
    constant body force has no moment about the centroid.
    """
    topo = tractions.topology
    mesh = topo.mesh
    d = mesh.dimension
    el = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    t = tractions.element_tractions(el)
    x = mesh.nodes[mesh.elements[el]]
    g = x.mean(axis=1)
    meas = topo.facet_measures[topo.element_facets[el]]  # (m, d+1)
    M = facet_mass(d)
    force = np.einsum("mf,mfac->mc", meas / d, t)
    force += mesh.measures[el, None] * np.asarray(prob.body_force)[None, :]
    moment = np.zeros((len(el),) if d == 2 else (len(el), 3))
    for f in range(d + 1):
        r = np.delete(x, f, axis=1) - g[:, None, :]
        tb = np.einsum("ab,mbc->mac", M, t[:, f]) * meas[:, f, None, None]
        if d == 2:
            moment += (r[:, :, 0] * tb[:, :, 1] - r[:, :, 1] * tb[:, :, 0]).sum(axis=1)
        else:
            moment += np.cross(r, tb).sum(axis=1)
    mom = np.abs(moment) if d == 2 else np.linalg.norm(moment, axis=1)
    return np.linalg.norm(force, axis=1), mom


def verify_equilibrium(tractions: TractionField, element: int, prob: ProblemDef) -> tuple[float, float]:
    """Force and moment residual of one element."""
    f, m = equilibrium_residuals(tractions, prob, np.array([element]))
    return float(f[0]), float(m[0])


def load_scale(fe: FESolution, prob: ProblemDef) -> float:
    """Characteristic stress of the problem.

    The largest of the FE stress, the prescribed tractions and the body
    force times the domain diameter.
    """
    mesh = fe.mesh
    diam = float(np.linalg.norm(np.ptp(mesh.nodes, axis=0)))
    vals = [np.abs(fe.stress).max(initial=0.0)]
    vals += [np.abs(v).max() for v in prob.neumann.values()]
    vals.append(np.abs(prob.body_force).max() * diam)
    return max(max(vals), 1e-300)


def scaled_equilibrium_residuals(tractions: TractionField, fe: FESolution,
                                 prob: ProblemDef) -> tuple[np.ndarray, np.ndarray]:
    """Residuals divided by element force and moment scales.

    Force scale is ``load_scale * |dE|``; moment scale additionally carries
    the element diameter.
    """
    topo = tractions.topology
    mesh = topo.mesh
    s = load_scale(fe, prob)
    perim = topo.facet_measures[topo.element_facets].sum(axis=1)
    x = mesh.nodes[mesh.elements]
    h = np.ptp(x, axis=1).max(axis=1)
    f, m = equilibrium_residuals(tractions, prob)
    return f / (s * perim), m / (s * perim * h)
