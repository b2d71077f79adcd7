"""Admissible stress recovery and the constitutive-relation-error bound."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .elasticity import FESolution, ProblemDef
from .errors import EstimatorError, IncompatibleDataError
from .local_solver import (
    LocalSpaces,
    build_local_spaces,
    element_energy,
    load_vectors,
    solve_local_neumann,
)
from .mesh import Mesh, Topology
from .quadrature import simplex_quadrature
from .standard import TractionField


@dataclass(frozen=True, eq=False)
class AdmissibleStress:
    """Recovered stress ``K eps(w_E)`` on every element.

    ``coefficients[e]`` are the displacement coefficients of the local
    solution in ``spaces``; ``residual[e]`` is the weak equilibrium residual
    ``max |K_E w_E - F_E|`` relative to the element data scale.
    """

    spaces: LocalSpaces
    coefficients: np.ndarray
    residual: np.ndarray
    provenance: str = "standard"

    def stress_at(self, elements, xi) -> np.ndarray:
        return self.spaces.stress_at(elements, xi, self.coefficients[np.asarray(elements)])


class PhaseTimer:
    """Accumulates wall-clock seconds per named phase."""

    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0

    @property
    def total(self) -> float:
        return float(sum(self.seconds.values()))


def recover_admissible_stress(mesh: Mesh, topo: Topology, tractions: TractionField,
                              prob: ProblemDef, spaces: LocalSpaces | None = None) -> AdmissibleStress:
    """Solve the element Neumann problems driven by ``eta F`` and ``f_d``."""
    if spaces is None:
        spaces = build_local_spaces(mesh, prob.material)
    t = tractions.element_tractions()
    body = np.broadcast_to(np.asarray(prob.body_force), (mesh.n_elements, mesh.dimension))
    try:
        w = solve_local_neumann(spaces, t, body)
    except IncompatibleDataError as exc:
        raise IncompatibleDataError(f"admissible stress recovery: {exc}") from exc
    F = load_vectors(spaces, t, body)
    kw = np.einsum("mij,mj->mi", spaces.stiffness, w)
    scale = np.maximum(np.abs(F).max(axis=1), np.abs(kw).max(axis=1))
    res = np.abs(kw - F).max(axis=1) / np.maximum(scale, 1e-300)
    return AdmissibleStress(spaces, w, res, tractions.provenance)


@dataclass(eq=False)
class ErrorReport:
    """Global estimate, per-element contributions and bookkeeping."""

    theta: float
    contributions: np.ndarray  # theta_E
    densities: np.ndarray  # theta_E^2 / |E|
    reference_error: float | None = None
    effectivity: float | None = None
    timings: dict = field(default_factory=dict)
    normalized_cpu: float | None = None
    g_eta: float | None = None
    l_t: float | None = None
    efficiency: float | None = None

    @property
    def contributions_sq(self) -> np.ndarray:
        return self.contributions ** 2

    def attach_reference(self, reference_error: float) -> "ErrorReport":
        self.reference_error = float(reference_error)
        self.effectivity = effectivity(self.theta, reference_error) if reference_error > 0 else None
        return self


def cre_estimate(admissible: AdmissibleStress, fe: FESolution) -> ErrorReport:
    """``theta_E = |sigma_hat - K eps(u_h)|`` in the complementary energy norm."""
    sq = element_energy(admissible.spaces, admissible.coefficients, fe.stress)
    scale = admissible.spaces.mesh.measures * np.abs(fe.stress).max(initial=0.0) ** 2
    scale = scale / admissible.spaces.material.young_modulus
    if np.any(sq < -1e-10 * np.maximum(scale, 1e-300)):
        raise EstimatorError("negative element energy: local stiffness is not positive")
    sq = np.maximum(sq, 0.0)
    theta = float(np.sqrt(sq.sum()))
    return ErrorReport(theta, np.sqrt(sq), sq / fe.mesh.measures)


def effectivity(theta: float, reference_error: float) -> float:
    if not reference_error > 0:
        raise EstimatorError("effectivity undefined: reference error is zero (FE solution exact)")
    return float(theta / reference_error)


def estimate_ratio(contributions) -> np.ndarray:
    """``theta_E^2 / max theta_E^2`` from the element contributions ``theta_E``."""
    c = np.asarray(contributions, dtype=float)
    if c.size == 0:
        raise EstimatorError("estimate ratio needs at least one contribution")
    top = np.abs(c).max()
    if not top > 0:
        raise EstimatorError("estimate ratio undefined: all contributions are zero")
    return (c / top) ** 2  # normalize first: squaring tiny contributions underflows


def efficiency_factor(eta: float, eta_std: float, t: float, t_std: float) -> tuple[float, float, float]:
    """Return ``(g_eta / l_t, g_eta, l_t)`` relative to the standard run."""
    if t == t_std:
        raise EstimatorError("efficiency factor undefined: equal CPU times (division by zero)")
    g = abs((eta - eta_std) / eta_std)
    l_t = abs((t - t_std) / t_std)
    return g / l_t, g, l_t


def stress_distance(admissible: AdmissibleStress, fine: FESolution, chunk: int = 4096) -> float:
    """``|sigma_ref - sigma_hat|`` in the complementary energy norm.

    ``fine`` is a solve on a nested refinement (its mesh carries ``parent``).
    The recovered stress is a polynomial on each coarse element, so it is
    evaluated at quadrature points of every fine element mapped into the
    parent's reference coordinates.
    """
    spaces = admissible.spaces
    fm = fine.mesh
    if fm.parent is None:
        raise EstimatorError("fine solution has no parent map; build it with uniform_refine")
    d = fm.dimension
    qp, qw = simplex_quadrature(d, 2 * spaces.degree)
    C = spaces.material.voigt_compliance()
    mesh = spaces.mesh
    total = 0.0
    for s in range(0, fm.n_elements, chunk):
        el = np.arange(s, min(s + chunk, fm.n_elements))
        xf = fm.nodes[fm.elements[el]]
        jf = np.transpose(xf[:, 1:] - xf[:, :1], (0, 2, 1))
        xq = xf[:, :1] + np.einsum("mij,qj->mqi", jf, qp)
        par = fm.parent[el]
        x0 = mesh.nodes[mesh.elements[par, 0]]
        xi = np.einsum("mqj,mij->mqi", xq - x0[:, None], np.transpose(spaces.jinv_t[par], (0, 2, 1)))
        diff = admissible.stress_at(par, xi) - fine.stress[el][:, None, :]
        dens = np.einsum("mqk,kl,mql->mq", diff, C, diff)
        total += float(np.einsum("m,q,mq->", np.abs(np.linalg.det(jf)), qw, dens))
    return float(np.sqrt(max(total, 0.0)))
