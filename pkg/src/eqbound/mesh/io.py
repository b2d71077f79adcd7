"""Gmsh MSH 2.2 (ASCII) reader/writer and legacy VTK ASCII writer."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import MeshError, MshParseError, UnsupportedElementError
from .core import Mesh, boundary_facets

# gmsh element type -> number of nodes
_GMSH_NODES = {1: 2, 2: 3, 4: 4, 15: 1}
_KNOWN_UNSUPPORTED = {3: "quadrangle", 5: "hexahedron", 6: "prism", 7: "pyramid",
                      8: "second-order line", 9: "second-order triangle",
                      11: "second-order tetrahedron"}


def _sections(lines: list[str], path) -> dict[str, list[tuple[int, str]]]:
    out: dict[str, list[tuple[int, str]]] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            start = i + 1
            j = start
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise MshParseError(f"{path}:{i + 1}: section ${name} is not terminated")
            out[name] = [(k + 1, lines[k]) for k in range(start, j)]
            i = j + 1
        else:
            i += 1
    return out


def load_msh(path) -> Mesh:
    """Read an ASCII MSH 2.2 file with triangles (2D) or tetrahedra (3D).

    Lower-dimensional elements carrying a physical tag become labeled
    boundary facets; the label is the physical name when one is declared,
    else the tag number as a string.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    sec = _sections(text.splitlines(), path)
    for name in ("MeshFormat", "Nodes", "Elements"):
        if name not in sec:
            raise MshParseError(f"{path}: missing ${name} section")
    lineno, fmt = sec["MeshFormat"][0]
    parts = fmt.split()
    if len(parts) < 3 or not parts[0].startswith("2"):
        raise MshParseError(f"{path}:{lineno}: only MSH 2.x ASCII is supported, got '{fmt.strip()}'")
    if parts[1] != "0":
        raise MshParseError(f"{path}:{lineno}: binary MSH files are not supported")

    names: dict[int, str] = {}
    for lineno, line in sec.get("PhysicalNames", [])[1:]:
        tok = line.split(maxsplit=2)
        if len(tok) < 3:
            raise MshParseError(f"{path}:{lineno}: malformed physical name")
        names[int(tok[1])] = tok[2].strip().strip('"')

    node_lines = sec["Nodes"]
    try:
        n_nodes = int(node_lines[0][1])
        ids, coords = [], []
        for lineno, line in node_lines[1:1 + n_nodes]:
            tok = line.split()
            ids.append(int(tok[0]))
            coords.append([float(t) for t in tok[1:4]])
    except (ValueError, IndexError) as exc:
        raise MshParseError(f"{path}: malformed $Nodes section: {exc}") from exc
    if len(ids) != n_nodes:
        raise MshParseError(f"{path}: $Nodes declares {n_nodes} nodes, found {len(ids)}")
    index = {nid: k for k, nid in enumerate(ids)}
    coords = np.array(coords, dtype=float)

    raw: dict[int, list] = {1: [], 2: [], 4: []}
    el_lines = sec["Elements"]
    try:
        n_el = int(el_lines[0][1])
    except (ValueError, IndexError) as exc:
        raise MshParseError(f"{path}: malformed $Elements header") from exc
    for lineno, line in el_lines[1:1 + n_el]:
        tok = line.split()
        try:
            etype, ntags = int(tok[1]), int(tok[2])
            tags = [int(t) for t in tok[3:3 + ntags]]
            conn = [int(t) for t in tok[3 + ntags:]]
        except (ValueError, IndexError) as exc:
            raise MshParseError(f"{path}:{lineno}: malformed element line") from exc
        if etype not in _GMSH_NODES:
            what = _KNOWN_UNSUPPORTED.get(etype, f"type {etype}")
            raise UnsupportedElementError(f"{path}:{lineno}: unsupported element {what}")
        if len(conn) != _GMSH_NODES[etype]:
            raise MshParseError(f"{path}:{lineno}: element type {etype} needs {_GMSH_NODES[etype]} nodes")
        if etype == 15:
            continue
        try:
            conn = [index[c] for c in conn]
        except KeyError as exc:
            raise MshParseError(f"{path}:{lineno}: dangling node reference {exc.args[0]}") from exc
        phys = tags[0] if tags else 0
        raw[etype].append((conn, phys))
    if len(el_lines) - 1 < n_el:
        raise MshParseError(f"{path}: $Elements declares {n_el} elements, found {len(el_lines) - 1}")

    if raw[4]:
        dim, cells, facet_type = 3, raw[4], 2
    elif raw[2]:
        dim, cells, facet_type = 2, raw[2], 1
    else:
        raise MshParseError(f"{path}: no triangles or tetrahedra found")
    elements = np.array([c for c, _ in cells], dtype=np.int64)
    used = np.unique(elements)
    nodes = coords[:, :dim]
    if dim == 2 and np.any(np.abs(coords[used, 2]) > 0):
        raise MshParseError(f"{path}: triangle mesh is not planar (z != 0)")
    bset = set(boundary_facets(elements))
    labels = {}
    for conn, phys in raw[facet_type]:
        key = tuple(sorted(conn))
        if key not in bset:
            raise MshParseError(f"{path}: mixed-dimension file, facet {key} is not on the boundary")
        if phys:
            labels[key] = names.get(phys, str(phys))
    # drop nodes that only carried points/lines
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    labels = {tuple(sorted(int(remap[i]) for i in k)): v for k, v in labels.items()}
    return Mesh(nodes[used], remap[elements], labels)


def save_msh(path, mesh: Mesh) -> None:
    """Write ``mesh`` as ASCII MSH 2.2 with labeled boundary facets."""
    d = mesh.dimension
    names = sorted(mesh.labels())
    tag = {n: k + 1 for k, n in enumerate(names)}
    cell_tag = len(names) + 1
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(names) + 1)]
    lines += [f'{d - 1} {tag[n]} "{n}"' for n in names]
    lines += [f'{d} {cell_tag} "domain"', "$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    for k, x in enumerate(mesh.nodes):
        xyz = list(x) + [0.0] * (3 - d)
        lines.append(f"{k + 1} " + " ".join(repr(float(v)) for v in xyz))
    lines.append("$EndNodes")
    facets = sorted(mesh.boundary_labels.items())
    lines += ["$Elements", str(len(facets) + mesh.n_elements)]
    eid = 1
    ftype, ctype = (1, 2) if d == 2 else (2, 4)
    for key, lab in facets:
        lines.append(f"{eid} {ftype} 2 {tag[lab]} {tag[lab]} " + " ".join(str(i + 1) for i in key))
        eid += 1
    for el in mesh.elements:
        lines.append(f"{eid} {ctype} 2 {cell_tag} {cell_tag} " + " ".join(str(i + 1) for i in el))
        eid += 1
    lines.append("$EndElements")
    Path(path).write_text("\n".join(lines) + "\n")


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "eqbound") -> None:
    """Legacy ASCII VTK unstructured grid.

    Arrays of shape ``(n,)`` are written as SCALARS, ``(n, d)`` as VECTORS
    (padded to 3 components); anything else is split into one scalar per
    column, suffixed ``_<k>``.
    """
    d = mesh.dimension
    pts = np.hstack([mesh.nodes, np.zeros((mesh.n_nodes, 3 - d))])
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_nodes} double"]
    out += [" ".join(f"{v:.17g}" for v in p) for p in pts]
    n_el, npe = mesh.elements.shape
    out.append(f"CELLS {n_el} {n_el * (npe + 1)}")
    out += [f"{npe} " + " ".join(str(i) for i in el) for el in mesh.elements]
    out.append(f"CELL_TYPES {n_el}")
    out += [("5" if d == 2 else "10")] * n_el

    def block(data, n):
        lines = []
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"field {name!r} has {arr.shape[0]} rows, expected {n}")
            key = name.replace(" ", "_")
            if arr.ndim == 1:
                lines += [f"SCALARS {key} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in arr]
            elif arr.ndim == 2 and arr.shape[1] == d:
                vec = np.hstack([arr, np.zeros((n, 3 - d))])
                lines.append(f"VECTORS {key} double")
                lines += [" ".join(f"{v:.17g}" for v in row) for row in vec]
            else:
                flat = arr.reshape(n, -1)
                for k in range(flat.shape[1]):
                    lines += [f"SCALARS {key}_{k} double 1", "LOOKUP_TABLE default"]
                    lines += [f"{v:.17g}" for v in flat[:, k]]
        return lines

    if point_data:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        out += block(point_data, mesh.n_nodes)
    if cell_data:
        out.append(f"CELL_DATA {n_el}")
        out += block(cell_data, n_el)
    Path(path).write_text("\n".join(out) + "\n")
