"""Legacy VTK (ASCII, version 2.0) unstructured-grid output for triangle meshes."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fem import FieldVec
from .mesh import Mesh


def _g(v: float) -> str:
    return "%.17g" % v


def write_vtk(mesh: Mesh, fields: dict[str, FieldVec], path, title: str = "sdllb") -> None:
    """One VECTORS record per field; P2 fields are sampled at the vertices."""
    nv, nt = mesh.num_vertices, mesh.num_triangles
    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    lines += [f"{_g(x)} {_g(y)} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if fields:
        lines.append(f"POINT_DATA {nv}")
    for name, field in fields.items():
        if field.space.mesh is not mesh and field.space.mesh.num_vertices != nv:
            raise ValueError(f"field {name!r} does not live on this mesh")
        lines.append(f"VECTORS {name} double")
        lines += [" ".join(_g(v) for v in row) for row in field.values[:nv]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Parse a file produced by :func:`write_vtk`: (points, triangles, vectors by name)."""
    tokens = Path(path).read_text().split("\n")
    i = 0
    points = cells = None
    vectors: dict[str, np.ndarray] = {}
    npts = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        if line[0] == "POINTS":
            npts = int(line[1])
            points = np.array([list(map(float, tokens[i + 1 + r].split())) for r in range(npts)])
            i += npts + 1
        elif line[0] == "CELLS":
            n = int(line[1])
            rows = [list(map(int, tokens[i + 1 + r].split())) for r in range(n)]
            if any(r[0] != 3 for r in rows):
                raise ValueError("only triangle cells are supported")
            cells = np.array([r[1:] for r in rows])
            i += n + 1
        elif line[0] == "VECTORS":
            vectors[line[1]] = np.array([list(map(float, tokens[i + 1 + r].split())) for r in range(npts)])
            i += npts + 1
        else:
            i += 1
    return points, cells, vectors
