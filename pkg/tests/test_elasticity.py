import numpy as np
import pytest

from conftest import jittered_square, tension_problem
from eqbound.elasticity import (
    Material,
    ProblemDef,
    assemble_solve,
    energy_norm_sigma,
    energy_norm_u,
    hooke_apply,
    prolongate,
    reference_error,
    tensor_to_voigt,
    voigt_to_tensor,
)
from eqbound.errors import ConfigError, NestingError, RigidModeError
from eqbound.mesh import build_topology, generate_structured, plate_with_hole_2d, uniform_refine


def solve(mesh, prob):
    return assemble_solve(mesh, build_topology(mesh), prob)


def test_material_validation():
    with pytest.raises(ConfigError):
        Material(0.0, 0.3)
    with pytest.raises(ConfigError):
        Material(1.0, 0.5)
    with pytest.raises(ConfigError):
        Material(1.0, 0.3, "plane_strain_typo")


def test_hooke_examples(mat2):
    np.testing.assert_array_equal(hooke_apply(mat2, np.zeros((2, 2))), np.zeros((2, 2)))
    np.testing.assert_allclose(hooke_apply(mat2, np.diag([1.0, -0.3])), np.diag([1.0, 0.0]), atol=1e-15)
    shear = np.array([[0.0, 1.0], [1.0, 0.0]])
    # G = E / (2 (1 + nu)), sigma_12 = 2 G eps_12
    assert hooke_apply(mat2, shear)[0, 1] == pytest.approx(1 / 1.3, rel=1e-14)


def test_hooke_3d_matches_lame(mat3, rng):
    lam, mu = mat3.lame
    eps = rng.standard_normal((3, 3))
    eps = 0.5 * (eps + eps.T)
    np.testing.assert_allclose(hooke_apply(mat3, eps), lam * np.trace(eps) * np.eye(3) + 2 * mu * eps,
                               rtol=1e-13)


def test_voigt_roundtrip(rng):
    for d in (2, 3):
        t = rng.standard_normal((4, d, d))
        t = t + np.swapaxes(t, 1, 2)
        np.testing.assert_allclose(voigt_to_tensor(tensor_to_voigt(t)), t)
        np.testing.assert_allclose(voigt_to_tensor(tensor_to_voigt(t, strain=True), strain=True), t)


def test_compliance_inverts_stiffness(mat2, mat3):
    for m in (mat2, mat3):
        np.testing.assert_allclose(m.voigt_compliance() @ m.voigt_stiffness(), np.eye(len(m.voigt_stiffness())),
                                   atol=1e-13)


def test_problem_validation(mat2):
    with pytest.raises(ConfigError):
        ProblemDef(mat2, {}, {"right": (1.0, 0.0)})
    with pytest.raises(ConfigError):
        ProblemDef(mat2, {"left": (0.0, 0.0)}, {"left": (1.0, 0.0)})
    with pytest.raises(ConfigError):
        ProblemDef(mat2, {"left": (0.0,)})
    prob = ProblemDef(mat2, {"nowhere": (0.0, 0.0)})
    with pytest.raises(ConfigError):
        prob.check_labels(generate_structured([1, 1], [1, 1]))


@pytest.mark.parametrize("n", [1, 3, 8])
def test_uniform_tension_exact(mat2, n):
    fe = solve(generate_structured([1.0, 1.0], [n, n]), tension_problem(mat2))
    np.testing.assert_allclose(fe.stress, np.tile([1.0, 0.0, 0.0], (fe.mesh.n_elements, 1)), atol=1e-12)
    np.testing.assert_allclose(fe.displacement[:, 0], fe.mesh.nodes[:, 0], atol=1e-12)
    np.testing.assert_allclose(fe.displacement[:, 1], -0.3 * fe.mesh.nodes[:, 1], atol=1e-12)


def test_uniform_tension_3d(mat3):
    fe = solve(generate_structured([1.0, 1.0, 1.0], [2, 2, 2]), tension_problem(mat3))
    np.testing.assert_allclose(fe.stress, np.tile([1.0, 0, 0, 0, 0, 0], (fe.mesh.n_elements, 1)), atol=1e-12)


def test_zero_data_zero_solution(mat2):
    fe = solve(generate_structured([1, 1], [2, 2]), ProblemDef(mat2, {"left": (0.0, 0.0)}))
    assert np.all(fe.displacement == 0)


def test_rigid_mode_error(mat2):
    prob = ProblemDef(mat2, {"left": (0.0, None)}, {"right": (1.0, 0.0)})
    with pytest.raises(RigidModeError):
        solve(generate_structured([1, 1], [2, 2]), prob)


def test_patch_test_affine_field(mat2, rng):
    mesh = jittered_square(5, rng)
    g = rng.standard_normal((2, 2))
    u0 = rng.standard_normal(2)
    exact = mesh.nodes @ g.T + u0
    # all boundaries are Dirichlet with the exact values: prescribe per node through labels
    topo = build_topology(mesh)
    prob = ProblemDef(mat2, {"left": (0.0, 0.0)})
    fe = assemble_solve(mesh, topo, prob)
    # substitute: a(u, phi) - l(phi) = K u restricted to interior dofs must vanish for affine u
    K = fe.stiffness
    interior = np.flatnonzero(np.all((mesh.nodes > 1e-12) & (mesh.nodes < 1 - 1e-12), axis=1))
    dofs = np.concatenate([interior * 2, interior * 2 + 1])
    r = (K @ exact.ravel())[dofs]
    assert np.abs(r).max() <= 1e-10 * np.abs(K @ exact.ravel()).max()


def test_fe_equilibrium_free_dofs(case_factory):
    fe = case_factory("lshape").fe
    u = fe.displacement.ravel()
    free = np.setdiff1d(np.arange(len(u)), fe.fixed_dofs)
    r = fe.stiffness @ u - fe.load
    assert np.abs(r[free]).max() <= 1e-9 * np.abs(fe.load).max()


def test_dirichlet_values_exact(mat2):
    prob = ProblemDef(mat2, {"left": (0.25, -0.5)}, {"right": (1.0, 2.0)})
    fe = solve(generate_structured([1, 1], [3, 3]), prob)
    left = np.isclose(fe.mesh.nodes[:, 0], 0.0)
    assert np.all(fe.displacement[left] == [0.25, -0.5])


def test_energy_norms(mat2, rng):
    mesh = generate_structured([1, 1], [2, 2])
    assert energy_norm_u(mesh, mat2, np.zeros((9, 2))) == 0.0
    assert energy_norm_sigma(mesh, mat2, np.tile([1.0, 0.0, 0.0], (8, 1))) == pytest.approx(1.0, rel=1e-14)
    from eqbound.elasticity import strain_matrices
    B = strain_matrices(mesh)
    for _ in range(20):
        u = rng.standard_normal((mesh.n_nodes, 2))
        eps = np.einsum("mki,mi->mk", B, u[mesh.elements].reshape(mesh.n_elements, -1))
        sig = eps @ mat2.voigt_stiffness().T
        assert energy_norm_u(mesh, mat2, u) == pytest.approx(energy_norm_sigma(mesh, mat2, sig), rel=1e-12)


def test_energy_norm_monotone_under_refinement(mat2):
    mesh = plate_with_hole_2d(n_arc=4, n_radial=6)
    prob = ProblemDef(mat2, {"symx": (0.0, None), "symy": (None, 0.0)}, {"right": (1.0, 0.0)})
    coarse = solve(mesh, prob)
    fine = solve(uniform_refine(mesh, 1), prob)
    assert coarse.energy_norm <= fine.energy_norm


def test_reference_error_examples(mat2, case_factory):
    fe = solve(generate_structured([1, 1], [2, 2]), tension_problem(mat2))
    assert reference_error(fe, fe).value == 0.0
    fine = solve(uniform_refine(fe.mesh, 2), tension_problem(mat2))
    assert abs(reference_error(fe, fine).value) <= 1e-10
    case = case_factory("plate_with_hole")
    ref, _ = case.reference(2)
    assert ref.shortcut == pytest.approx(ref.direct, rel=1e-8)
    assert np.sqrt(ref.per_element.sum()) == pytest.approx(ref.direct, rel=1e-12)


def test_prolongate_requires_nesting(mat2):
    coarse = generate_structured([1, 1], [2, 2])
    other = generate_structured([1, 1], [4, 4])
    with pytest.raises(NestingError):
        prolongate(coarse, other, np.zeros((coarse.n_nodes, 2)))
    fine = uniform_refine(coarse, 1)
    u = np.column_stack([coarse.nodes[:, 0] ** 1, coarse.nodes[:, 1]])
    np.testing.assert_allclose(prolongate(coarse, fine, u), fine.nodes, atol=1e-14)
