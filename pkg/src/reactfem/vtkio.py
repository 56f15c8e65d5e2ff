"""Legacy ASCII VTK output for meshes and nodal scalar fields."""

from __future__ import annotations

import numpy as np

from .mesh import QUAD4, Mesh

# Legacy VTK cell type ids.
_VTK_TRIANGLE = 5
_VTK_QUAD = 9


def write_vtk(path, mesh: Mesh, point_data: dict[str, np.ndarray] | None = None, title: str = "reactfem output") -> None:
    """Write the mesh and optional nodal scalars as an unstructured grid.

    Each entry of point_data becomes one SCALARS block. Values are written
    with 12 significant digits so repeated runs produce identical files.
    """
    cells = mesh.elements
    nen = cells.shape[1]
    cell_type = _VTK_QUAD if mesh.kind == QUAD4 else _VTK_TRIANGLE
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(title[:255] + "\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_nodes} double\n")
        for x, y in mesh.nodes:
            f.write(f"{x:.12g} {y:.12g} 0\n")
        f.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nen + 1)}\n")
        for elem in cells:
            f.write(" ".join([str(nen)] + [str(int(n)) for n in elem]) + "\n")
        f.write(f"CELL_TYPES {mesh.n_elements}\n")
        for _ in range(mesh.n_elements):
            f.write(f"{cell_type}\n")
        if point_data:
            f.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (mesh.n_nodes,):
                    raise ValueError(f"point data {name!r} has shape {values.shape}, expected ({mesh.n_nodes},)")
                clean = name.replace(" ", "_")
                f.write(f"SCALARS {clean} double 1\n")
                f.write("LOOKUP_TABLE default\n")
                for v in values:
                    f.write(f"{v:.12g}\n")
