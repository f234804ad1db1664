"""Vector-valued Lagrange spaces of degree 1 and 2 on triangles.

A vector field is stored as an ``(N, 3)`` array of nodal values; its flat
view is node-major, component-minor, which is the ordering used by every
assembled matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .expr import VectorExpr
from .mesh import Mesh, RefinementMap
from .quadrature import QuadRule, quadrature_for

QUAD_DEGREE = {1: 4, 2: 8}

_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
# P2 edge dofs 3, 4, 5 sit opposite vertices 0, 1, 2
_EDGE_ENDS = np.array([[1, 2], [2, 0], [0, 1]])


def shape_functions(degree: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference basis values (..., nloc) and gradients (..., nloc, 2) at points ``xi`` (..., 2)."""
    xi = np.asarray(xi, dtype=float)
    lam = np.stack([1.0 - xi[..., 0] - xi[..., 1], xi[..., 0], xi[..., 1]], axis=-1)
    if degree == 1:
        grads = np.broadcast_to(_GRAD_LAMBDA, lam.shape + (2,)).copy()
        return lam, grads
    if degree != 2:
        raise ValueError("degree must be 1 or 2")
    vals = [lam[..., i] * (2.0 * lam[..., i] - 1.0) for i in range(3)]
    grads = [(4.0 * lam[..., i] - 1.0)[..., None] * _GRAD_LAMBDA[i] for i in range(3)]
    for a, b in _EDGE_ENDS:
        vals.append(4.0 * lam[..., a] * lam[..., b])
        grads.append(4.0 * (lam[..., a][..., None] * _GRAD_LAMBDA[b] + lam[..., b][..., None] * _GRAD_LAMBDA[a]))
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


@dataclass(eq=False)
class FeSpace:
    mesh: Mesh
    degree: int
    quad: QuadRule = field(default=None)

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if self.quad is None:
            self.quad = quadrature_for(QUAD_DEGREE[self.degree])
        mesh = self.mesh
        nv = mesh.num_vertices
        if self.degree == 1:
            self.element_dofs = np.asarray(mesh.triangles)
            self.dof_coords = np.asarray(mesh.vertices)
        else:
            self.element_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
            e = mesh.edges
            mids = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
            self.dof_coords = np.vstack([mesh.vertices, mids])
        self.num_scalar = len(self.dof_coords)

        p = mesh.vertices[mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns are edge vectors
        self.origin = p[:, 0]
        self.jac = J
        self.jac_inv = np.linalg.inv(J)
        self.area = 0.5 * np.abs(np.linalg.det(J))
        self.N, dN = shape_functions(self.degree, self.quad.xi)  # (nq, nloc), (nq, nloc, 2)
        self.grads = np.einsum("qid,edk->eqik", dN, self.jac_inv)  # (nt, nq, nloc, 2)
        self.wdet = self.area[:, None] * self.quad.weights[None, :]  # (nt, nq)
        self.quad_points = self.origin[:, None, :] + np.einsum("ekd,qd->eqk", J, self.quad.xi)

    @property
    def num_dofs(self) -> int:
        return 3 * self.num_scalar

    @property
    def nloc(self) -> int:
        return self.element_dofs.shape[1]

    @cached_property
    def grads_t(self) -> np.ndarray:
        return np.ascontiguousarray(self.grads.transpose(0, 1, 3, 2))

    @cached_property
    def grad_dots(self) -> np.ndarray:
        """grad N_i . grad N_j at each quadrature point, (nt, nq, nloc, nloc)."""
        return np.einsum("eqik,eqjk->eqij", self.grads, self.grads)

    @cached_property
    def grad_dots_flat(self) -> np.ndarray:
        """``grad_dots`` reshaped to (nt, nq, nloc * nloc)."""
        return self.grad_dots.reshape(*self.wdet.shape, -1)

    @cached_property
    def NN(self) -> np.ndarray:
        """N_i N_j at quadrature points, (nq, nloc * nloc)."""
        return (self.N[:, :, None] * self.N[:, None, :]).reshape(len(self.N), -1)

    def zeros(self) -> "FieldVec":
        return FieldVec(np.zeros((self.num_scalar, 3)), self)

    def interpolate(self, f: VectorExpr, t: float = 0.0) -> "FieldVec":
        """Nodal interpolant."""
        x, y = self.dof_coords.T
        return FieldVec(np.array(f(x, y, t), dtype=float), self)

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at quadrature points, (nt, nq, 3) for nodal (N, 3) input."""
        return np.matmul(self.N, coeffs[self.element_dofs])

    def gradients(self, coeffs: np.ndarray) -> np.ndarray:
        """Gradients at quadrature points, (nt, nq, 3, 2)."""
        g = np.matmul(self.grads_t, coeffs[self.element_dofs][:, None])  # (nt, nq, 2, 3)
        return g.transpose(0, 1, 3, 2)

    def integrate(self, q: np.ndarray) -> float:
        """Integral of a scalar given at quadrature points (nt, nq)."""
        return float(np.sum(self.wdet * q))

    @cached_property
    def scalar_mass(self) -> sp.csr_matrix:
        return _scalar_matrix(self, (self.wdet @ self.NN).reshape(-1, self.nloc, self.nloc))

    @cached_property
    def scalar_stiffness(self) -> sp.csr_matrix:
        return _scalar_matrix(self, np.einsum("eq,eqij->eij", self.wdet, self.grad_dots))

    @cached_property
    def vector_mass(self) -> sp.csr_matrix:
        return sp.kron(self.scalar_mass, sp.identity(3), format="csr")


def _scalar_matrix(space: FeSpace, elem: np.ndarray) -> sp.csr_matrix:
    dofs = space.element_dofs
    n = space.nloc
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    A = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(space.num_scalar,) * 2).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def build_space(mesh: Mesh, degree: int) -> FeSpace:
    return FeSpace(mesh, degree)


@dataclass(eq=False)
class FieldVec:
    """Nodal coefficients ``values`` of shape (num_scalar, 3) on ``space``."""

    values: np.ndarray
    space: FeSpace

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, 3)
        if len(self.values) != self.space.num_scalar:
            raise ValueError(f"field has {len(self.values)} nodes, space has {self.space.num_scalar}")

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def from_flat(cls, x: np.ndarray, space: FeSpace) -> "FieldVec":
        return cls(np.asarray(x).reshape(-1, 3), space)

    def __sub__(self, other: "FieldVec") -> "FieldVec":
        return FieldVec(self.values - other.values, self.space)

    def at_quad(self) -> np.ndarray:
        return self.space.values(self.values)

    def grad_at_quad(self) -> np.ndarray:
        return self.space.gradients(self.values)


def l2_project(f: VectorExpr, space: FeSpace, t: float = 0.0, tol: float = 1e-12) -> FieldVec:
    """L2 projection: solve M u = (f, phi) with quadrature-evaluated load."""
    from .sparse import solve_bicgstab

    xq = space.quad_points
    fq = f(xq[..., 0], xq[..., 1], t)  # (nt, nq, 3)
    if not np.all(np.isfinite(fq)):
        raise ValueError("field expression produced non-finite values on the domain")
    elem = np.einsum("eq,qi,eqc->eic", space.wdet, space.N, fq)
    load = np.zeros((space.num_scalar, 3))
    np.add.at(load, space.element_dofs, elem)
    # one scalar mass solve per component
    out = np.empty_like(load)
    for c in range(3):
        out[:, c] = solve_bicgstab(space.scalar_mass, load[:, c], tol=tol).x
    return FieldVec(out, space)


def barycentric(space: FeSpace, tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference coordinates of points ``x`` (..., 2) in triangles ``tri`` (...)."""
    d = x - space.origin[tri]
    return np.einsum("...kd,...d->...k", space.jac_inv[tri], d)


class ParentTransfer:
    """Evaluation of a coarse field at fine quadrature points through the refinement lineage.

    Each fine point is evaluated with the polynomial of the parent coarse
    triangle. On nested (square) meshes this is exact; on disk meshes points
    in the boundary crescents are extrapolated from their parent element.
    """

    def __init__(self, coarse: FeSpace, fine: FeSpace, rmap: RefinementMap):
        if len(rmap.parent) != fine.mesh.num_triangles or rmap.num_coarse_vertices != coarse.mesh.num_vertices:
            raise ValueError("refinement map does not match the given spaces")
        if coarse.degree != fine.degree:
            raise ValueError("spaces must share a degree")
        self.coarse, self.fine = coarse, fine
        parent = rmap.parent
        xq = fine.quad_points  # (ntf, nq, 2)
        ref = barycentric(coarse, np.broadcast_to(parent[:, None], xq.shape[:2]), xq)
        vals, grads = shape_functions(coarse.degree, ref)  # (ntf, nq, nloc), (.., nloc, 2)
        grads = np.einsum("eqik,ekd->eqid", grads, coarse.jac_inv[parent])
        cols = np.broadcast_to(coarse.element_dofs[parent][:, None, :], vals.shape)
        rows = np.broadcast_to(np.arange(vals.shape[0] * vals.shape[1]).reshape(vals.shape[:2])[..., None], vals.shape)
        shape = (vals.shape[0] * vals.shape[1], coarse.num_scalar)
        mk = lambda data: sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
        self.value_op = mk(vals)
        self.grad_ops = (mk(grads[..., 0]), mk(grads[..., 1]))
        self._shape = xq.shape[:2]

    def values(self, coarse_coeffs: np.ndarray) -> np.ndarray:
        return (self.value_op @ coarse_coeffs).reshape(self._shape + (3,))

    def gradients(self, coarse_coeffs: np.ndarray) -> np.ndarray:
        gx = (self.grad_ops[0] @ coarse_coeffs).reshape(self._shape + (3,))
        gy = (self.grad_ops[1] @ coarse_coeffs).reshape(self._shape + (3,))
        return np.stack([gx, gy], axis=-1)

    def difference_norms(self, fine_field: FieldVec, coarse_field: FieldVec) -> tuple[float, float]:
        """(L2, H1) norms of fine - coarse evaluated on the fine mesh."""
        f = self.fine
        dv = f.values(fine_field.values) - self.values(coarse_field.values)
        dg = f.gradients(fine_field.values) - self.gradients(coarse_field.values)
        l2sq = f.integrate(np.sum(dv**2, axis=-1))
        semi = f.integrate(np.sum(dg**2, axis=(-1, -2)))
        return float(np.sqrt(l2sq)), float(np.sqrt(l2sq + semi))


def prolong(coarse: FieldVec, rmap: RefinementMap, fine_space: FeSpace) -> FieldVec:
    """Nodal values of the coarse piecewise polynomial on the refined space."""
    cs = coarse.space
    if len(rmap.parent) != fine_space.mesh.num_triangles or rmap.num_coarse_vertices != cs.mesh.num_vertices:
        raise ValueError("refinement map does not match the given spaces")
    if fine_space.degree != cs.degree:
        raise ValueError("spaces must share a degree")
    flat_dofs = fine_space.element_dofs.ravel()
    first = np.unique(flat_dofs, return_index=True)[1]
    tri = rmap.parent[first // fine_space.nloc]
    ref = barycentric(cs, tri, fine_space.dof_coords)
    vals, _ = shape_functions(cs.degree, ref)
    out = np.einsum("ni,nic->nc", vals, coarse.values[cs.element_dofs[tri]])
    return FieldVec(out, fine_space)


class OutsideDomainError(ValueError):
    pass


def locate(space: FeSpace, x: float, y: float, tol: float = 1e-9) -> tuple[int, np.ndarray]:
    """Containing triangle and reference coordinates; clamps points within ``tol`` of the mesh."""
    ref = barycentric(space, np.arange(space.mesh.num_triangles), np.array([x, y]))
    lam = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref])
    worst = lam.min(axis=1)
    t = int(np.argmax(worst))
    if worst[t] >= -1e-12:
        return t, ref[t]
    # distance from the point to the best candidate, measured in physical units
    lam_t = np.clip(lam[t], 0.0, None)
    lam_t /= lam_t.sum()
    p = space.mesh.vertices[space.mesh.triangles[t]]
    proj = lam_t @ p
    if np.hypot(proj[0] - x, proj[1] - y) > tol:
        raise OutsideDomainError(f"point ({x}, {y}) lies outside the mesh")
    return t, lam_t[1:]


def evaluate(field: FieldVec, x: float, y: float) -> tuple[float, float, float]:
    space = field.space
    t, ref = locate(space, x, y)
    vals, _ = shape_functions(space.degree, ref)
    v = vals @ field.values[space.element_dofs[t]]
    return float(v[0]), float(v[1]), float(v[2])


def norm(field: FieldVec, kind: str = "L2") -> float:
    """One of L2, H1semi, H1, L4 or NodalMax (max Euclidean nodal magnitude)."""
    sp_ = field.space
    if kind == "NodalMax":
        return float(np.max(np.linalg.norm(field.values, axis=1), initial=0.0))
    if kind in ("L2", "L4"):
        mag2 = np.sum(field.at_quad() ** 2, axis=-1)
        if kind == "L2":
            return float(np.sqrt(sp_.integrate(mag2)))
        return float(sp_.integrate(mag2**2) ** 0.25)
    semi = sp_.integrate(np.sum(field.grad_at_quad() ** 2, axis=(-1, -2)))
    if kind == "H1semi":
        return float(np.sqrt(semi))
    if kind == "H1":
        l2 = sp_.integrate(np.sum(field.at_quad() ** 2, axis=-1))
        return float(np.sqrt(l2 + semi))
    raise ValueError(f"unknown norm {kind!r}")
