"""TOML case files.

A case names one mesh source, the material, boundary conditions and the
estimator options::

    [mesh]
    generator = "structured"      # or file = "plate.msh"
    extents = [1.0, 1.0]
    counts = [4, 4]

    [material]
    young_modulus = 1.0
    poisson_ratio = 0.3
    mode = "plane_stress"         # or "3d"

    [bc.dirichlet]
    left = [0.0, "free"]          # "free" leaves a component unconstrained

    [bc.neumann]
    right = [1.0, 0.0]

    [load]
    body_force = [0.0, 0.0]

    [estimator]
    method = "standard"
    criterion = "estimate"
    fractions = [0.0, 0.1, 1.0]
    ref_levels = 2

Relative mesh paths are resolved against the case file's directory.  A bare
name such as ``plate_with_hole`` refers to a bundled case.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .elasticity import Material, ProblemDef
from .enhanced import CRITERIA
from .errors import ConfigError, MeshError
from .mesh import Mesh, generate_structured, l_shape, load_msh, plate_with_hole_2d, plate_with_hole_3d

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

GENERATORS = {
    "structured": generate_structured,
    "plate_with_hole_2d": plate_with_hole_2d,
    "plate_with_hole_3d": plate_with_hole_3d,
    "l_shape": l_shape,
}
METHODS = ("standard", "enhanced")


@dataclass
class EstimatorOptions:
    method: str = "standard"
    criterion: str | None = None
    fractions: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    ref_levels: int = 2
    extra_degree: int = 3

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose standard or enhanced")
        if self.criterion is not None and self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}; choose from {', '.join(CRITERIA)}")
        for f in self.fractions:
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"fraction {f} outside [0, 1]")
        if self.ref_levels < 0:
            raise ConfigError("ref_levels must be >= 0")
        if not 1 <= self.extra_degree <= 3:
            raise ConfigError("extra_degree must be 1, 2 or 3")


@dataclass
class CaseConfig:
    name: str
    mesh_file: Path | None
    generator: str | None
    generator_args: dict
    problem: ProblemDef
    estimator: EstimatorOptions
    out_dir: Path
    source: Path | None = None

    def load_mesh(self) -> Mesh:
        if self.mesh_file is not None:
            if not self.mesh_file.exists():
                raise MeshError(f"mesh file not found: {self.mesh_file}")
            mesh = load_msh(self.mesh_file)
        else:
            try:
                mesh = GENERATORS[self.generator](**self.generator_args)
            except TypeError as exc:
                raise ConfigError(f"[mesh] bad arguments for generator {self.generator!r}: {exc}") from exc
        self.problem.check_labels(mesh)
        return mesh


def bundled_cases() -> list[str]:
    root = resources.files("eqbound") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_case_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    if path.suffix == "" and name in bundled_cases():
        return Path(str(resources.files("eqbound") / "cases" / f"{name}.toml"))
    raise ConfigError(f"config file not found: {name} (bundled cases: {', '.join(bundled_cases())})")


def _vector(value, name: str, allow_free: bool = False):
    if not isinstance(value, list):
        raise ConfigError(f"{name} must be a list")
    out = []
    for v in value:
        if allow_free and v == "free":
            out.append(None)
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(float(v))
        else:
            raise ConfigError(f"{name}: bad component {v!r}")
    return out


def parse_config(data: dict, base_dir: Path = Path("."), name: str = "case",
                 source: Path | None = None) -> CaseConfig:
    known = {"mesh", "material", "bc", "load", "estimator", "output", "name"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    mesh = dict(data.get("mesh", {}))
    if ("file" in mesh) == ("generator" in mesh):
        raise ConfigError("[mesh] needs exactly one of 'file' and 'generator'")
    mesh_file, generator, gargs = None, None, {}
    if "file" in mesh:
        mesh_file = Path(mesh.pop("file"))
        if not mesh_file.is_absolute():
            mesh_file = base_dir / mesh_file
        if mesh:
            raise ConfigError(f"[mesh] unexpected keys with 'file': {sorted(mesh)}")
    else:
        generator = mesh.pop("generator")
        if generator not in GENERATORS:
            raise ConfigError(f"[mesh] unknown generator {generator!r}; choose from {sorted(GENERATORS)}")
        gargs = mesh

    mat = data.get("material", {})
    try:
        material = Material(float(mat.get("young_modulus", 1.0)), float(mat.get("poisson_ratio", 0.3)),
                            str(mat.get("mode", "plane_stress")))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[material] {exc}") from exc
    bc = data.get("bc", {})
    dirichlet = {k: _vector(v, f"bc.dirichlet.{k}", allow_free=True)
                 for k, v in bc.get("dirichlet", {}).items()}
    neumann = {k: _vector(v, f"bc.neumann.{k}") for k, v in bc.get("neumann", {}).items()}
    body = _vector(data.get("load", {}).get("body_force", []), "load.body_force")
    problem = ProblemDef(material, dirichlet, neumann, tuple(body))

    est = dict(data.get("estimator", {}))
    try:
        opts = EstimatorOptions(
            method=str(est.pop("method", "standard")),
            criterion=est.pop("criterion", None),
            fractions=[float(x) for x in est.pop("fractions", [])],
            thresholds=[float(x) for x in est.pop("thresholds", [])],
            ref_levels=int(est.pop("ref_levels", 2)),
            extra_degree=int(est.pop("extra_degree", 3)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[estimator] {exc}") from exc
    if est:
        raise ConfigError(f"[estimator] unknown keys: {sorted(est)}")
    opts.validate()
    out = Path(data.get("output", {}).get("dir", "out"))
    return CaseConfig(str(data.get("name", name)), mesh_file, generator, gargs, problem, opts, out, source)


def load_config(name: str) -> CaseConfig:
    path = resolve_case_path(name)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(data, path.parent, path.stem, path)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
