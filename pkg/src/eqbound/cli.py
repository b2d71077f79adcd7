"""Command-line front end: ``eqbound {solve,estimate,sweep}``.

Exit codes: 0 success, 1 other package error, 2 configuration, 3 mesh,
4 infeasible constraints, 5 rank deficiency, 6 estimator.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import CaseConfig, load_config
from .enhanced import CRITERIA, criterion_values
from .errors import ConfigError, EqBoundError
from .estimator import efficiency_factor
from .mesh import write_vtk
from .pipeline import Case, EstimateResult

log = logging.getLogger("eqbound")

SENTINEL = {"radius": 0.0, "edge": 0.0, "area": 0.0, "estimate": 1.1}


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="case file (TOML) or the name of a bundled case")
    common.add_argument("--mesh", help="MSH 2.2 file overriding the case's mesh source")
    common.add_argument("--out", help="output directory (default from the case file)")
    common.add_argument("--ref-levels", type=int, help="uniform refinements of the reference solve")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweep points")
    common.add_argument("-v", "--verbose", action="store_true")
    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--method", choices=("standard", "enhanced"))
    est.add_argument("--criterion", choices=CRITERIA)
    est.add_argument("--fractions", type=_float_list, help="comma-separated fractions of elements")
    est.add_argument("--thresholds", type=_float_list, help="comma-separated criterion thresholds")

    parser = argparse.ArgumentParser(prog="eqbound", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="FE solve; writes fields.vtk and report.json")
    sub.add_parser("estimate", parents=[common, est], help="error bound; writes report.json and fields.vtk")
    sub.add_parser("sweep", parents=[common, est],
                   help="criterion sweep over all criteria unless --criterion is given; writes sweep.csv")
    return parser


def _apply_overrides(cfg: CaseConfig, args) -> CaseConfig:
    if args.mesh:
        cfg.mesh_file, cfg.generator, cfg.generator_args = Path(args.mesh), None, {}
    if args.out:
        cfg.out_dir = Path(args.out)
    opts = cfg.estimator
    if args.ref_levels is not None:
        opts.ref_levels = args.ref_levels
    for key in ("method", "criterion"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(opts, key, val)
    fractions, thresholds = getattr(args, "fractions", None), getattr(args, "thresholds", None)
    if fractions is not None or thresholds is not None:
        # a sweep list on the command line replaces both lists of the case file
        opts.fractions, opts.thresholds = fractions or [], thresholds or []
    opts.validate()
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _dump_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _mesh_meta(case: Case) -> dict:
    return {"dimension": case.mesh.dimension, "n_nodes": case.mesh.n_nodes,
            "n_elements": case.mesh.n_elements, "n_facets": case.topology.n_facets}


def _fields(case: Case) -> tuple[dict, dict]:
    fe = case.fe
    point = {"displacement": fe.displacement}
    cell = {"stress": fe.stress,
            "radius_ratio": case.metrics.radius_ratio,
            "edge_or_area_ratio": case.metrics.edge_or_area_ratio}
    return point, cell


def run_solve(cfg: CaseConfig, args) -> dict:
    case = Case(cfg.load_mesh(), cfg.problem, cfg.estimator.extra_degree)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    point, cell = _fields(case)
    write_vtk(cfg.out_dir / "fields.vtk", case.mesh, point, cell, title=f"{cfg.name} FE solution")
    report = {"case": cfg.name, "mesh": _mesh_meta(case), "energy_norm": case.fe.energy_norm,
              "max_abs_stress": float(np.abs(case.fe.stress).max())}
    _dump_json(cfg.out_dir / "report.json", report)
    return report


def _reference(case: Case, levels: int):
    if levels < 1:
        return None
    ref, _ = case.reference(levels)
    return ref


def _single_selection(case: Case, cfg: CaseConfig):
    opts = cfg.estimator
    if opts.criterion is None:
        raise ConfigError("method 'enhanced' needs --criterion")
    values = list(opts.fractions) + list(opts.thresholds)
    if len(values) != 1:
        raise ConfigError("method 'enhanced' needs exactly one fraction or threshold for 'estimate'")
    if opts.fractions:
        return case.select(opts.criterion, fraction=opts.fractions[0])
    return case.select(opts.criterion, threshold=opts.thresholds[0])


def run_estimate(cfg: CaseConfig, args) -> dict:
    case = Case(cfg.load_mesh(), cfg.problem, cfg.estimator.extra_degree)
    opts = cfg.estimator
    std = case.standard
    result: EstimateResult = std
    if opts.method == "enhanced":
        result = case.enhanced(_single_selection(case, cfg))
    ref = _reference(case, opts.ref_levels)
    rep = result.report
    if ref is not None and ref.value > 0:
        rep.attach_reference(ref.value)
        std.report.attach_reference(ref.value)
    force, moment = case.equilibrium(result)
    report = {
        "case": cfg.name,
        "method": opts.method,
        "mesh": _mesh_meta(case),
        "theta": rep.theta,
        "theta_standard": std.report.theta,
        "contributions": rep.contributions.tolist(),
        "densities": rep.densities.tolist(),
        "reference_error": None if ref is None else ref.value,
        "reference_levels": opts.ref_levels,
        "effectivity": rep.effectivity,
        "max_force_residual": force,
        "max_moment_residual": moment,
        "max_local_residual": float(result.admissible.residual.max()),
        "constraint_residual": result.constraint_residual,
        "timings": {**rep.timings, "total": result.seconds},
    }
    if result.selection is not None:
        sel = result.selection
        report["selection"] = {"criterion": sel.criterion, "mode": sel.mode, "value": sel.value,
                               "n_selected": len(sel), "n_facets": len(sel.facets),
                               "n_seam": len(sel.seam)}
        if std.seconds != result.seconds and rep.effectivity and std.report.effectivity:
            eff, g, l_t = efficiency_factor(rep.effectivity, std.report.effectivity,
                                            result.seconds, std.seconds)
            report.update(g_eta=g, l_t=l_t, efficiency=eff,
                          normalized_cpu=result.seconds / std.seconds)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg.out_dir / "report.json", report)
    point, cell = _fields(case)
    cell.update(contribution=rep.contributions, density=rep.densities,
                estimate_ratio=case.estimate_ratios)
    mask = np.zeros(case.mesh.n_elements)
    if result.selection is not None:
        mask[result.selection.elements] = 1.0
    cell["selected"] = mask
    if ref is not None:
        cell["reference_contribution"] = np.sqrt(ref.per_element)
    write_vtk(cfg.out_dir / "fields.vtk", case.mesh, point, cell, title=f"{cfg.name} {opts.method} estimate")
    return report


@dataclass
class SweepRow:
    criterion: str
    mode: str
    threshold: float
    fraction: float
    n_selected: int
    theta: float
    eta: float
    cpu_seconds: float
    normalized_cpu: float
    g_eta: float
    l_t: float
    efficiency: float


def sweep_criteria(case: Case, requested: str | None) -> list[str]:
    """Criteria of a sweep: the one named with ``--criterion``, otherwise all three."""
    if requested:
        return [requested]
    geo = "edge" if case.mesh.dimension == 2 else "area"
    return ["radius", geo, "estimate"]


def _sweep_point(case: Case, criterion: str, mode: str, value: float, ref: float | None,
                 eta_std: float, t_std: float) -> SweepRow:
    if mode == "fraction":
        sel = case.select(criterion, fraction=value)
    else:
        sel = case.select(criterion, threshold=value)
    if len(sel) == 0:  # standard baseline: nothing to optimize
        theta = case.standard.report.theta
        fraction = value if mode == "fraction" else 0.0
        threshold = value if mode == "threshold" else SENTINEL[criterion]
        return SweepRow(criterion, mode, threshold, fraction, 0, theta, eta_std, t_std, 1.0,
                        0.0, 0.0, math.nan)
    res = case.enhanced(sel)
    theta = res.report.theta
    eta = theta / ref if ref else math.nan
    vals = criterion_values(criterion, case.metrics,
                            case.estimate_ratios if criterion == "estimate" else None)
    if mode == "fraction":
        fraction = value
        picked = vals[sel.elements]
        threshold = float(picked.min() if criterion == "estimate" else picked.max())
    else:
        threshold, fraction = value, len(sel) / case.mesh.n_elements
    t = res.seconds
    if t != t_std and ref:
        eff, g, l_t = efficiency_factor(eta, eta_std, t, t_std)
    else:
        eff, g, l_t = math.nan, 0.0, 0.0
    return SweepRow(criterion, mode, threshold, fraction, len(sel), theta, eta, t, t / t_std, g, l_t, eff)


def run_sweep(cfg: CaseConfig, args) -> list[SweepRow]:
    case = Case(cfg.load_mesh(), cfg.problem, cfg.estimator.extra_degree)
    opts = cfg.estimator
    if not opts.fractions and not opts.thresholds:
        raise ConfigError("sweep needs --fractions or --thresholds")
    ref_err = _reference(case, opts.ref_levels)
    ref = ref_err.value if ref_err is not None and ref_err.value > 0 else None
    std = case.standard
    case.estimate_ratios  # noqa: B018 - computed once before worker threads start
    case.metrics  # noqa: B018
    t_std = std.seconds
    eta_std = std.report.theta / ref if ref else math.nan
    jobs = []
    for crit in sweep_criteria(case, getattr(args, "criterion", None)):
        jobs.append((crit, "threshold", SENTINEL[crit]))
        jobs += [(crit, "fraction", f) for f in opts.fractions]
        jobs += [(crit, "threshold", t) for t in opts.thresholds]
    threads = getattr(args, "threads", 1) or 1
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda j: _sweep_point(case, *j, ref, eta_std, t_std), jobs))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SweepRow.__dataclass_fields__))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(row).items()})
    report = {"case": cfg.name, "mesh": _mesh_meta(case), "theta_standard": std.report.theta,
              "reference_error": ref, "effectivity_standard": eta_std,
              "rows": [asdict(r) for r in rows], "timings": {"standard": t_std}}
    _dump_json(cfg.out_dir / "report.json", report)
    return rows


COMMANDS = {"solve": run_solve, "estimate": run_estimate, "sweep": run_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        COMMANDS[args.command](cfg, args)
    except EqBoundError as exc:
        print(f"eqbound: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
