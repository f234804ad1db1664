"""Conforming triangulations of the square [-1,1]^2 and the unit disk, with red refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with counter-clockwise triangles.

    ``level`` counts refinements from the coarsest mesh of the family; for the
    square family ``n`` is the number of subdivisions per side.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3) int
    domain: str  # "square" | "disk"
    level: int = 0
    n: int | None = None
    _edges: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        edges, tri_edges, counts = _edge_table(self.triangles)
        object.__setattr__(self, "_edges", (edges, tri_edges, counts))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted (min, max) vertex pairs, lexicographically ordered."""
        return self._edges[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of the edge opposite each local vertex, shape (nt, 3)."""
        return self._edges[1]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self._edges[2] == 1]

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def angles(self) -> np.ndarray:
        """Interior angles in degrees, shape (nt, 3)."""
        p = self.vertices[self.triangles]
        out = np.empty((self.num_triangles, 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def validate(self) -> None:
        if np.any(self.signed_areas() <= 0):
            raise ValueError("mesh has non-positive triangle area")
        counts = self._edges[2]
        if np.any((counts < 1) | (counts > 2)):
            raise ValueError("mesh is not edge-manifold")
        if self.domain == "disk":
            r2 = np.sum(self.vertices[self.boundary_vertices] ** 2, axis=1)
            if np.any(np.abs(r2 - 1.0) > 1e-12):
                raise ValueError("disk boundary vertex off the unit circle")


def _edge_table(triangles: np.ndarray):
    # local edge i is opposite local vertex i
    local = np.array([[1, 2], [2, 0], [0, 1]])
    all_edges = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(all_edges, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1, 3), counts


@dataclass(frozen=True)
class RefinementMap:
    """Lineage of a red-refined mesh.

    ``parent[t]`` is the coarse triangle of fine triangle ``t`` and ``child_slot[t]``
    its position 0..3 (slots 0-2 touch coarse vertex 0-2, slot 3 is the centre).
    Fine vertices ``0..nv_coarse-1`` are the coarse vertices; the rest are
    midpoints of coarse edges in coarse edge order.
    """

    parent: np.ndarray
    child_slot: np.ndarray
    num_coarse_vertices: int
    midpoint_of_edge: np.ndarray  # coarse edge -> fine vertex


def unit_square_mesh(n: int) -> Mesh:
    """Uniform n-by-n grid on [-1,1]^2, cells split lower-left to upper-right."""
    if n < 1:
        raise ValueError("n must be at least 1")
    s = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    ll = (j * (n + 1) + i).ravel()
    lr, ul, ur = ll + 1, ll + n + 1, ll + n + 2
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles, "square", level=0, n=n)


def unit_disk_mesh(level: int) -> Mesh:
    """Hexagon fan refined ``level`` times, boundary midpoints pushed onto the circle."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    theta = np.arange(6) * np.pi / 3
    vertices = np.vstack([[0.0, 0.0], np.column_stack([np.cos(theta), np.sin(theta)])])
    triangles = np.array([[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)])
    mesh = Mesh(vertices, triangles, "disk", level=0)
    for _ in range(level):
        mesh, _ = refine(mesh)
    return mesh


def refine(mesh: Mesh) -> tuple[Mesh, RefinementMap]:
    """Red refinement: each triangle split into four through its edge midpoints."""
    nv = mesh.num_vertices
    edges = mesh.edges
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    if mesh.domain == "disk":
        on_boundary = mesh._edges[2] == 1
        r = np.linalg.norm(midpoints[on_boundary], axis=1, keepdims=True)
        midpoints[on_boundary] /= r
    vertices = np.vstack([mesh.vertices, midpoints])
    mid = nv + mesh.triangle_edges  # mid[:, i] sits opposite local vertex i
    v = mesh.triangles
    children = np.stack(
        [
            np.column_stack([v[:, 0], mid[:, 2], mid[:, 1]]),
            np.column_stack([mid[:, 2], v[:, 1], mid[:, 0]]),
            np.column_stack([mid[:, 1], mid[:, 0], v[:, 2]]),
            np.column_stack([mid[:, 0], mid[:, 1], mid[:, 2]]),
        ],
        axis=1,
    )
    nt = mesh.num_triangles
    fine = Mesh(
        vertices,
        children.reshape(-1, 3),
        mesh.domain,
        level=mesh.level + 1,
        n=None if mesh.n is None else 2 * mesh.n,
    )
    rmap = RefinementMap(
        parent=np.repeat(np.arange(nt), 4),
        child_slot=np.tile(np.arange(4), nt),
        num_coarse_vertices=nv,
        midpoint_of_edge=nv + np.arange(len(edges)),
    )
    return fine, rmap


def mesh_size(mesh: Mesh) -> float:
    """Maximum edge length."""
    return float(mesh.edge_lengths().max())


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.num_vertices - len(mesh.edges) + mesh.num_triangles
