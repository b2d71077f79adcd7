"""Simplicial meshes: container, topology, quality metrics and file I/O."""
from .core import (
    Mesh,
    QualityMetrics,
    boundary_facets,
    edge_or_area_ratio,
    generate_structured,
    quality_metrics,
    radius_ratio,
    simplex_measures,
    uniform_refine,
)
from .io import load_msh, save_msh, write_vtk
from .shapes import l_shape, plate_with_hole_2d, plate_with_hole_3d
from .topology import Topology, barycentric_gradients, build_topology

__all__ = [
    "Mesh", "QualityMetrics", "Topology", "barycentric_gradients", "boundary_facets",
    "build_topology", "edge_or_area_ratio", "generate_structured", "l_shape", "load_msh",
    "plate_with_hole_2d", "plate_with_hole_3d", "quality_metrics", "radius_ratio",
    "save_msh", "simplex_measures", "uniform_refine", "write_vtk",
]
