"""Shared fixtures: bundled cases are built once per session."""
from __future__ import annotations

import numpy as np
import pytest

from eqbound.config import load_config
from eqbound.elasticity import Material, ProblemDef
from eqbound.mesh import Mesh, generate_structured
from eqbound.pipeline import Case

BUNDLED = ["uniform_tension", "two_element", "lshape", "plate_with_hole", "plate_with_hole_3d"]

_CASES: dict[str, Case] = {}


def bundled_case(name: str) -> Case:
    if name not in _CASES:
        cfg = load_config(name)
        _CASES[name] = Case(cfg.load_mesh(), cfg.problem, cfg.estimator.extra_degree)
    return _CASES[name]


@pytest.fixture(scope="session")
def case_factory():
    return bundled_case


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def mat2():
    return Material(1.0, 0.3, "plane_stress")


@pytest.fixture
def mat3():
    return Material(1.0, 0.3, "3d")


def tension_problem(material: Material, sxx: float = 1.0) -> ProblemDef:
    if material.dimension == 2:
        return ProblemDef(material, {"left": (0.0, None), "bottom": (None, 0.0)}, {"right": (sxx, 0.0)})
    return ProblemDef(material, {"left": (0.0, None, None), "bottom": (None, 0.0, None),
                                 "front": (None, None, 0.0)}, {"right": (sxx, 0.0, 0.0)})


def jittered_square(n: int, rng, amount: float = 0.25) -> Mesh:
    """Structured square with interior nodes moved randomly (labels kept)."""
    base = generate_structured([1.0, 1.0], [n, n])
    nodes = base.nodes.copy()
    interior = np.all((nodes > 1e-12) & (nodes < 1 - 1e-12), axis=1)
    nodes[interior] += rng.uniform(-amount, amount, (interior.sum(), 2)) / n
    return Mesh(nodes, base.elements, base.boundary_labels)


def null_space_qp(A, b, C, q):
    """Dense null-space-method oracle for ``min 1/2 x'Ax - b'x, Cx = q``.

    ``C`` may contain redundant (consistent) rows; the SVD handles them.
    """
    import scipy.linalg as sla

    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape[0] == 0:
        return np.linalg.solve(A, b)
    x0 = np.linalg.lstsq(C, q, rcond=None)[0]
    Z = sla.null_space(C, rcond=1e-10)
    if Z.shape[1] == 0:
        return x0
    y = np.linalg.solve(Z.T @ A @ Z, Z.T @ (b - A @ x0))
    return x0 + Z @ y


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}")
