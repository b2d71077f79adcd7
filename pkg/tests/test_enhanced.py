import numpy as np
import pytest
import scipy.linalg as sla

from conftest import BUNDLED, jittered_square, null_space_qp, tension_problem
from eqbound.elasticity import ProblemDef
from eqbound.enhanced import (
    assemble_constraints,
    assemble_qp,
    compute_H,
    seam_facet_counts,
    select_elements,
    solve_enhanced,
)
from eqbound.errors import ConfigError
from eqbound.linalg import constraint_residual
from eqbound.local_solver import balancing_body_force, solve_local_neumann
from eqbound.mesh import generate_structured
from eqbound.pipeline import Case


def small_case(mat, rng, n=3):
    prob = ProblemDef(mat, {"left": (0.0, 0.0)},
                      {"right": tuple(rng.standard_normal(2)), "top": tuple(rng.standard_normal(2))},
                      body_force=tuple(rng.standard_normal(2)))
    return Case(jittered_square(n, rng), prob)


def build(case, sel):
    H = compute_H(sel, case.mesh.dimension)
    qp = assemble_qp(sel, H, case.fe, case.spaces, case.topology)
    return assemble_constraints(qp, H, case.standard.tractions, case.problem, case.spaces, case.topology), H


def dense_constraints(qp):
    blocks = qp.blocks()
    C = np.vstack([b.matrix.toarray() for b in blocks])
    q = np.concatenate([b.rhs for b in blocks])
    return C, q


# --------------------------------------------------------------------------
# selection

def test_selection_examples(case_factory):
    case = case_factory("plate_with_hole")
    m = case.mesh.n_elements
    assert len(case.select("estimate", threshold=1.1)) == 0
    assert len(case.select("radius", threshold=0.0)) == 0
    for crit in ("radius", "edge", "area", "estimate"):
        full = case.select(crit, fraction=1.0)
        np.testing.assert_array_equal(full.elements, np.arange(m))
        assert len(case.select(crit, fraction=0.0)) == 0
    top = int(np.argmax(case.standard.report.contributions))
    assert case.estimate_ratios[top] == 1.0
    for thr in (0.0, 0.37, 1.0):
        assert top in case.select("estimate", threshold=thr).elements


def test_selection_direction_and_fraction(case_factory):
    case = case_factory("lshape")
    m = case.mesh.n_elements
    sel = case.select("radius", fraction=0.1)
    assert len(sel) == int(np.ceil(0.1 * m))
    rr = case.metrics.radius_ratio
    assert rr[sel.elements].max() <= np.delete(rr, sel.elements).min()
    est = case.select("estimate", fraction=0.1)
    er = case.estimate_ratios
    assert er[est.elements].min() >= np.delete(er, est.elements).max()
    thr = case.select("radius", threshold=float(np.median(rr)))
    assert np.all(rr[thr.elements] <= np.median(rr))
    # edge and area are the same criterion
    np.testing.assert_array_equal(case.select("edge", fraction=0.2).elements,
                                  case.select("area", fraction=0.2).elements)


def test_selection_ties_broken_by_id(mat2):
    case = Case(generate_structured([1, 1], [4, 4]), tension_problem(mat2))
    # all elements of a structured mesh are congruent: ties everywhere
    sel = case.select("radius", fraction=0.25)
    np.testing.assert_array_equal(sel.elements, np.arange(8))


def test_selection_errors(case_factory):
    case = case_factory("two_element")
    with pytest.raises(ConfigError):
        select_elements(case.topology, "estimate", threshold=0.5)
    with pytest.raises(ConfigError):
        select_elements(case.topology, "radius", threshold=0.5, fraction=0.5, metrics=case.metrics)
    with pytest.raises(ConfigError):
        select_elements(case.topology, "radius", fraction=1.5, metrics=case.metrics)
    with pytest.raises(ConfigError):
        select_elements(case.topology, "aspect", fraction=0.5, metrics=case.metrics)


@pytest.mark.parametrize("name", BUNDLED)
def test_selection_structure(case_factory, name):
    case = case_factory(name)
    topo = case.topology
    for crit in ("radius", "estimate"):
        for frac in (0.05, 0.3):
            sel = case.select(crit, fraction=frac)
            assert np.all(np.isin(sel.elements, sel.touched))
            np.testing.assert_array_equal(sel.facets, np.unique(topo.element_facets[sel.elements]))
            fe = topo.facet_elements[sel.facets]
            assert np.all(np.isin(fe, sel.elements).any(axis=1))
            # every touched element shares a facet with J_e
            counts = seam_facet_counts(sel, topo)
            assert np.all(counts >= 1)
            assert np.all(counts <= topo.mesh.dimension + 1)


def test_seam_exactly_one_facet_claim(case_factory):
    """The one-facet claim for seam elements does not hold on general selections."""
    case = case_factory("plate_with_hole")
    counts = seam_facet_counts(case.select("radius", fraction=0.3), case.topology)
    assert counts.min() == 1
    assert counts.max() > 1


# --------------------------------------------------------------------------
# H part

def test_compute_H(case_factory):
    case = case_factory("lshape")
    sel = case.select("radius", fraction=0.2)
    H = compute_H(sel, 2)
    assert H.shape == (len(sel.facets), 2, 2) and not H.any()
    assert compute_H(case.select("radius", fraction=0.0), 2).shape == (0, 2, 2)
    with pytest.raises(ConfigError):
        compute_H(sel, 2, p=2)


# --------------------------------------------------------------------------
# QP assembly

def test_qp_zero_stress(mat2):
    prob = ProblemDef(mat2, {"left": (0.0, 0.0)})
    case = Case(generate_structured([1, 1], [2, 2]), prob)
    qp, H = build(case, case.select("radius", fraction=1.0))
    assert np.all(qp.B == 0)
    _, merged, res = solve_enhanced(qp, H, case.standard.tractions, prob)
    assert np.abs(res.primal).max() <= 1e-14
    assert np.abs(merged.values).max() <= 1e-14


def test_qp_matches_direct_local_solves(mat2):
    rng = np.random.default_rng(99)
    case = small_case(mat2, rng)
    sp_ = case.spaces
    sel = case.select("radius", fraction=0.5)
    qp, _ = build(case, sel)
    A = qp.A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-14 * np.abs(A).max())
    assert np.linalg.eigvalsh(A).min() >= -1e-10 * np.abs(A).max()
    D_inv = case.problem.material.voigt_compliance()
    from eqbound.quadrature import simplex_quadrature
    qpts, qw = simplex_quadrature(2, 2 * sp_.degree)
    for _ in range(5):
        r = rng.standard_normal(qp.n_dofs)
        vals = np.zeros_like(case.standard.tractions.values)
        vals[sel.facets] = r.reshape(-1, 2, 2)
        from eqbound.standard import TractionField
        tf = TractionField(case.topology, vals, np.zeros((case.topology.n_facets, 2), dtype=bool))
        t = tf.element_tractions(sel.elements)
        sub = _subspaces(sp_, sel.elements)
        bal = balancing_body_force(sub, t)
        w = solve_local_neumann(sub, t, bal.constant, body_rotation=bal.rotation)
        energy = np.einsum("mi,mij,mj->", w, sub.stiffness, w)
        assert r @ A @ r == pytest.approx(energy, rel=1e-10)
        # linear term by quadrature of sigma(w) : K^-1 sigma_h
        s = sub.stress_at(np.arange(len(sel.elements)), qpts, w)  # (m, q, 3)
        detj = np.abs(np.linalg.det(sub.jacobian))
        lin = np.einsum("m,q,mqk,kl,ml->", detj, qw, s, D_inv, case.fe.stress[sel.elements])
        assert r @ qp.B == pytest.approx(lin, rel=1e-10)


def _subspaces(spaces, elements):
    from eqbound.local_solver import build_local_spaces
    return build_local_spaces(spaces.mesh, spaces.material, k=spaces.degree - 1, elements=elements)


def test_constraints_uniform_tension_substitution(mat2):
    prob = tension_problem(mat2)
    case = Case(generate_structured([1, 1], [3, 3]), prob)
    sel = case.select("radius", fraction=1.0)
    qp, _ = build(case, sel)
    assert len(sel.seam) == 0
    assert qp.L_full.n_rows == 3 * case.mesh.n_elements
    n = case.topology.facet_normals[sel.facets]
    exact = np.repeat((n @ np.diag([1.0, 0.0]))[:, None, :], 2, axis=1).ravel()
    for blk in (qp.C, qp.L_full):
        r = blk.matrix @ exact - blk.rhs
        assert np.abs(r).max() <= 1e-11


def test_constraint_row_counts(case_factory):
    for name, nr in (("lshape", 3), ("plate_with_hole_3d", 6)):
        case = case_factory(name)
        sel = case.select("radius", fraction=0.1)
        qp, _ = build(case, sel)
        assert qp.L_full.n_rows == nr * len(sel.touched)
        assert qp.L.n_rows <= qp.L_full.n_rows
        assert qp.P.n_rows == 0


# --------------------------------------------------------------------------
# solve

def test_empty_selection_is_standard(case_factory):
    case = case_factory("plate_with_hole")
    res = case.enhanced(case.select("estimate", threshold=1.1))
    np.testing.assert_array_equal(res.tractions.values, case.standard.tractions.values)
    assert res.report.theta == case.standard.report.theta


@pytest.mark.parametrize("frac", [0.2, 1.0])
def test_uniform_tension_any_selection(mat2, frac):
    prob = tension_problem(mat2)
    case = Case(generate_structured([1, 1], [4, 4]), prob)
    res = case.enhanced(case.select("radius", fraction=frac))
    n = case.topology.facet_normals
    want = np.repeat((n @ np.diag([1.0, 0.0]))[:, None, :], 2, axis=1)
    np.testing.assert_allclose(res.tractions.values, want, atol=1e-10)


def test_qp_matches_null_space_oracle(mat2):
    rng = np.random.default_rng(4321)
    for _ in range(20):
        case = small_case(mat2, rng)
        frac = float(rng.uniform(0.1, 1.0))
        crit = ("radius", "edge", "estimate")[int(rng.integers(3))]
        sel = case.select(crit, fraction=frac)
        qp, H = build(case, sel)
        _, _, res = solve_enhanced(qp, H, case.standard.tractions, case.problem)
        C = np.vstack([qp.C.matrix.toarray(), qp.L_full.matrix.toarray()])
        q = np.concatenate([qp.C.rhs, qp.L_full.rhs])
        want = null_space_qp(qp.A.toarray(), qp.B, C, q)
        np.testing.assert_allclose(res.primal, want, rtol=1e-9, atol=1e-9 * np.abs(want).max())


def test_qp_optimality_and_feasibility(mat2):
    rng = np.random.default_rng(2024)
    case = small_case(mat2, rng, n=4)
    sel = case.select("radius", fraction=0.4)
    qp, H = build(case, sel)
    _, _, res = solve_enhanced(qp, H, case.standard.tractions, case.problem)
    x = res.primal
    for blk in (qp.C, qp.L, qp.L_full):
        assert np.abs(blk.matrix @ x - blk.rhs).max() <= 1e-10 * (1 + np.abs(blk.rhs).max())
    C, _ = dense_constraints(qp)
    Z = sla.null_space(C)
    A = qp.A.toarray()

    def obj(v):
        return 0.5 * v @ A @ v - v @ qp.B

    f0 = obj(x)
    for _ in range(50):
        assert obj(x + Z @ rng.standard_normal(Z.shape[1])) >= f0 - 1e-9


@pytest.mark.parametrize("name", BUNDLED)
def test_full_enhancement(case_factory, name):
    case = case_factory(name)
    std = case.standard
    res = case.enhanced(case.select("radius", fraction=1.0))
    assert res.report.theta <= std.report.theta + 1e-12
    fmax, mmax = case.equilibrium(res)
    assert fmax <= 1e-9 and mmax <= 1e-9
    assert res.constraint_residual <= 1e-10 * (1 + max(np.abs(b.rhs).max(initial=0) for b in res.qp.blocks()))
    assert constraint_residual(res.qp.blocks(), res.saddle.primal) == res.constraint_residual


@pytest.mark.parametrize("name", ["lshape", "plate_with_hole"])
def test_partial_selection_equilibrium(case_factory, name):
    case = case_factory(name)
    for crit in ("radius", "edge", "estimate"):
        res = case.enhanced(case.select(crit, fraction=0.1))
        fmax, mmax = case.equilibrium(res)
        assert fmax <= 1e-9 and mmax <= 1e-9
        outside = np.setdiff1d(np.arange(case.topology.n_facets), res.selection.facets)
        np.testing.assert_array_equal(res.tractions.values[outside], case.standard.tractions.values[outside])
