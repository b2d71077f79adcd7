"""End-to-end orchestration: FE solve, standard and enhanced estimates, reference."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .elasticity import FESolution, ProblemDef, ReferenceError_, assemble_solve, reference_error
from .enhanced import (
    QPSystem,
    Selection,
    assemble_constraints,
    assemble_qp,
    compute_H,
    select_elements,
)
from .enhanced import solve_enhanced as _solve_enhanced
from .errors import EqBoundError
from .estimator import (
    AdmissibleStress,
    ErrorReport,
    PhaseTimer,
    cre_estimate,
    estimate_ratio,
    recover_admissible_stress,
)
from .linalg import SaddleResult, constraint_residual
from .local_solver import LocalSpaces, build_local_spaces
from .mesh import Mesh, Topology, build_topology, quality_metrics, uniform_refine
from .standard import TractionField, scaled_equilibrium_residuals, standard_tractions

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EstimateResult:
    report: ErrorReport
    tractions: TractionField
    admissible: AdmissibleStress
    selection: Selection | None = None
    qp: QPSystem | None = None
    saddle: SaddleResult | None = None
    seconds: float = 0.0

    @property
    def constraint_residual(self) -> float:
        if self.qp is None or self.saddle is None:
            return 0.0
        return constraint_residual(self.qp.blocks(), self.saddle.primal)


@dataclass(eq=False)
class Case:
    """Lazily evaluated pipeline state for one mesh and problem."""

    mesh: Mesh
    problem: ProblemDef
    extra_degree: int = 3
    timer: PhaseTimer = field(default_factory=PhaseTimer)

    @cached_property
    def topology(self) -> Topology:
        with self.timer.phase("topology"):
            return build_topology(self.mesh)

    @cached_property
    def fe(self) -> FESolution:
        with self.timer.phase("fe_solve"):
            return assemble_solve(self.mesh, self.topology, self.problem)

    @cached_property
    def spaces(self) -> LocalSpaces:
        with self.timer.phase("local_spaces"):
            return build_local_spaces(self.mesh, self.problem.material, k=self.extra_degree)

    @cached_property
    def metrics(self):
        return quality_metrics(self.mesh)

    @cached_property
    def standard(self) -> EstimateResult:
        self.spaces  # built outside the timed estimate, shared by all runs
        t0 = time.perf_counter()
        with self.timer.phase("patch_solve"):
            tf = standard_tractions(self.fe, self.topology, self.problem)
        with self.timer.phase("recovery"):
            adm = recover_admissible_stress(self.mesh, self.topology, tf, self.problem, self.spaces)
            rep = cre_estimate(adm, self.fe)
        seconds = time.perf_counter() - t0
        rep.timings = {"patch_solve": self.timer.seconds["patch_solve"],
                       "recovery": self.timer.seconds["recovery"]}
        return EstimateResult(rep, tf, adm, seconds=seconds)

    @cached_property
    def estimate_ratios(self) -> np.ndarray:
        return estimate_ratio(self.standard.report.contributions)

    def select(self, criterion: str, *, fraction: float | None = None,
               threshold: float | None = None) -> Selection:
        ratios = self.estimate_ratios if criterion == "estimate" else None
        return select_elements(self.topology, criterion, fraction=fraction, threshold=threshold,
                               metrics=self.metrics, estimate_ratios=ratios)

    def enhanced(self, selection: Selection) -> EstimateResult:
        """Enhanced estimate; its time includes the standard construction it builds on."""
        std = self.standard
        timings = {}
        t0 = time.perf_counter()
        t = time.perf_counter()
        H = compute_H(selection, self.mesh.dimension)
        qp = assemble_qp(selection, H, self.fe, self.spaces, self.topology)
        qp = assemble_constraints(qp, H, std.tractions, self.problem, self.spaces, self.topology)
        timings["qp_assembly"] = time.perf_counter() - t
        t = time.perf_counter()
        _, merged, res = _solve_enhanced(qp, H, std.tractions, self.problem)
        timings["qp_solve"] = time.perf_counter() - t
        t = time.perf_counter()
        adm = recover_admissible_stress(self.mesh, self.topology, merged, self.problem, self.spaces)
        rep = cre_estimate(adm, self.fe)
        timings["recovery"] = time.perf_counter() - t
        seconds = std.seconds + time.perf_counter() - t0
        rep.timings = {**std.report.timings, **{f"enhanced_{k}": v for k, v in timings.items()}}
        if res is not None and res.ridge:
            log.warning("enhanced QP needed a ridge of %.3e", res.ridge)
        return EstimateResult(rep, merged, adm, selection, qp, res, seconds)

    def reference(self, levels: int) -> tuple[ReferenceError_, FESolution]:
        """Nested overkill solve ``levels`` uniform refinements deep."""
        cache = self.__dict__.setdefault("_references", {})
        if levels not in cache:
            if levels < 1:
                raise EqBoundError("reference error needs at least one refinement level")
            with self.timer.phase("reference"):
                fine = uniform_refine(self.mesh, levels)
                fs = assemble_solve(fine, build_topology(fine), self.problem)
                cache[levels] = (reference_error(self.fe, fs), fs)
        return cache[levels]

    def equilibrium(self, result: EstimateResult) -> tuple[float, float]:
        f, m = scaled_equilibrium_residuals(result.tractions, self.fe, self.problem)
        return float(f.max()), float(m.max())
