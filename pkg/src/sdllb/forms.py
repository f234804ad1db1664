"""Assembly of the per-step linear systems and the named bilinear forms.

Conventions: ``m`` and ``s`` fields are (N, 3) nodal arrays; ``cross_matrix(v) @ u = v x u``.
The magnetisation system for the unknown ``u`` at step n is

    M u + k [aa' K + akmu M + ak M_{|m|^2} - ga' C(m) + g' X(s)] u = M m_prev

and the spin system is

    M u + k [K_D - b K_{D m m} + M_D / tau_sf + Y_D(m) / tau_J] u = M s_prev + k b' F(m, j)

with all frozen coefficients taken from step n-1.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp

from .expr import Expr, VectorExpr
from .fem import FeSpace, FieldVec

SCALARS = ("gamma", "alpha", "gamma_prime", "alpha_prime", "kappa", "mu", "tau_sf", "tau_J", "beta", "beta_prime")
POSITIVE = ("gamma", "alpha", "alpha_prime", "kappa", "tau_sf", "tau_J", "beta", "beta_prime")


@dataclass(frozen=True)
class Coefficients:
    """Physical coefficients; ``j`` keeps its in-plane components only (the third is ignored)."""

    gamma: float = 1.0
    alpha: float = 1.0
    gamma_prime: float = 1.0
    alpha_prime: float = 1.0
    kappa: float = 1.0
    mu: float = 1.0
    tau_sf: float = 1.0
    tau_J: float = 1.0
    beta: float = 0.1
    beta_prime: float = 1.0
    D0: Expr = field(default_factory=lambda: Expr.parse("1"))
    j: VectorExpr = field(default_factory=lambda: VectorExpr.parse(["0", "0", "0"]))

    def __post_init__(self):
        for name in SCALARS:
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"coefficient {name} must be finite")
        for name in POSITIVE:
            if getattr(self, name) <= 0:
                raise ValueError(f"coefficient {name} must be positive, got {getattr(self, name)}")
        if self.gamma_prime < 0:
            raise ValueError("coefficient gamma_prime must be nonnegative")

    def with_(self, **kw) -> "Coefficients":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name in SCALARS}
        out["D0"] = self.D0.source
        out["j"] = self.j.sources[:2]
        return out


def cross_matrix(v: np.ndarray) -> np.ndarray:
    """Matrices [v]_x with [v]_x u = v x u, shape v.shape[:-1] + (3, 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


class D0BoundsError(ValueError):
    pass


def sample_d0(space: FeSpace, coeff: Coefficients, t: float = 0.0) -> np.ndarray:
    """D0 at quadrature points; rejects non-finite or non-positive samples."""
    xq = space.quad_points
    d = np.broadcast_to(np.asarray(coeff.D0(xq[..., 0], xq[..., 1], t), dtype=float), xq.shape[:2])
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise D0BoundsError("D0 must be finite and strictly positive at every quadrature point")
    return d


def d0_bounds(space: FeSpace, coeff: Coefficients, t: float = 0.0) -> tuple[float, float]:
    """(D_*, D^*) estimated from the quadrature samples."""
    d = sample_d0(space, coeff, t)
    return float(d.min()), float(d.max())


def sample_j(space: FeSpace, coeff: Coefficients, t: float) -> np.ndarray:
    xq = space.quad_points
    j = coeff.j(xq[..., 0], xq[..., 1], t)[..., :2]
    if not np.all(np.isfinite(j)):
        raise ValueError("current density is not finite on the domain")
    return j


class BlockAssembler:
    """Scatters element blocks (nt, nloc, nloc, 3, 3) into a CSR matrix with a fixed pattern."""

    def __init__(self, space: FeSpace):
        self.space = space
        dofs = space.element_dofs
        n = space.nloc
        comp = np.arange(3)
        rows = 3 * dofs[:, :, None, None, None] + comp[None, None, None, :, None]
        cols = 3 * dofs[:, None, :, None, None] + comp[None, None, None, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        N = space.num_dofs
        key = rows.ravel().astype(np.int64) * N + cols.ravel()
        uniq, self.slot = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, N)
        self.indices = c.astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(N + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self.shape = (N, N)
        self._n = n

    def matrix(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=blocks.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def load(self, elem: np.ndarray) -> np.ndarray:
        """Sum element vectors (nt, nloc, 3) into a flat global vector."""
        out = np.zeros((self.space.num_scalar, 3))
        np.add.at(out, self.space.element_dofs, elem)
        return out.reshape(-1)


_EYE3 = np.eye(3)


def _scalar_blocks(S: np.ndarray) -> np.ndarray:
    return S[..., None, None] * _EYE3


def mass_blocks(space: FeSpace, weight: np.ndarray | None = None) -> np.ndarray:
    w = space.wdet if weight is None else space.wdet * weight
    return (w @ space.NN).reshape(-1, space.nloc, space.nloc)


def stiffness_blocks(space: FeSpace, weight: np.ndarray | None = None) -> np.ndarray:
    w = space.wdet if weight is None else space.wdet * weight
    return np.matmul(w[:, None, :], space.grad_dots_flat)[:, 0].reshape(-1, space.nloc, space.nloc)


def _weight_samples(space: FeSpace, weight, t: float) -> np.ndarray | None:
    if weight is None:
        return None
    if isinstance(weight, (int, float)):
        return np.full(space.wdet.shape, float(weight))
    if not isinstance(weight, Expr):
        weight = Expr.parse(weight)
    xq = space.quad_points
    w = np.broadcast_to(np.asarray(weight(xq[..., 0], xq[..., 1], t), dtype=float), xq.shape[:2])
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite weight sample")
    return w


def scalar_mass_matrix(space: FeSpace, weight=None, t: float = 0.0) -> sp.csr_matrix:
    from .fem import _scalar_matrix

    return _scalar_matrix(space, mass_blocks(space, _weight_samples(space, weight, t)))


def scalar_stiffness_matrix(space: FeSpace, weight=None, t: float = 0.0) -> sp.csr_matrix:
    from .fem import _scalar_matrix

    return _scalar_matrix(space, stiffness_blocks(space, _weight_samples(space, weight, t)))


def mass_matrix(space: FeSpace, weight=None, t: float = 0.0) -> sp.csr_matrix:
    """Vector mass matrix, optionally weighted by a scalar expression."""
    return sp.kron(scalar_mass_matrix(space, weight, t), _EYE3, format="csr")


def stiffness_matrix(space: FeSpace, weight=None, t: float = 0.0) -> sp.csr_matrix:
    return sp.kron(scalar_stiffness_matrix(space, weight, t), _EYE3, format="csr")


def exchange_cross_blocks(space: FeSpace, phi: np.ndarray) -> np.ndarray:
    """Blocks of u -> (phi x grad u, grad w)."""
    wphi = space.wdet[..., None] * space.values(phi)
    S = np.matmul(space.grad_dots_flat.transpose(0, 2, 1), wphi)
    return cross_matrix(S.reshape(-1, space.nloc, space.nloc, 3))


def mass_cross_blocks(space: FeSpace, phi: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """Blocks of u -> (weight u x phi, w)."""
    w = space.wdet if weight is None else space.wdet * weight
    S = np.matmul(space.NN.T, w[..., None] * space.values(phi))
    return -cross_matrix(S.reshape(-1, space.nloc, space.nloc, 3))


def outer_stiffness_blocks(space: FeSpace, phi: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """Blocks of u -> (weight (phi (x) phi) grad u, grad w)."""
    w = space.wdet if weight is None else space.wdet * weight
    pq = space.values(phi)
    outer = (w[..., None, None] * pq[..., :, None] * pq[..., None, :]).reshape(*w.shape, 9)
    S = np.matmul(space.grad_dots_flat.transpose(0, 2, 1), outer)
    return S.reshape(-1, space.nloc, space.nloc, 3, 3)


class Assembler:
    """Per-space cache of the pattern and the unweighted blocks."""

    def __init__(self, space: FeSpace):
        self.space = space
        self.blocks = BlockAssembler(space)
        self.M_elem = mass_blocks(space)
        self.K_elem = stiffness_blocks(space)
        self.M = space.vector_mass

    def m_system(self, m_prev: FieldVec, s_prev: FieldVec, coeff: Coefficients, k: float):
        _check(self.space, m_prev, s_prev, k)
        sp_ = self.space
        c = coeff
        mq = m_prev.at_quad()
        mass_w = 1.0 + k * (c.alpha * c.kappa * c.mu + c.alpha * c.kappa * np.sum(mq**2, axis=-1))
        E = _scalar_blocks(mass_blocks(sp_, mass_w) + k * c.alpha * c.alpha_prime * self.K_elem)
        if c.gamma * c.alpha_prime != 0.0:
            E = E - k * c.gamma * c.alpha_prime * exchange_cross_blocks(sp_, m_prev.values)
        if c.gamma_prime != 0.0:
            E = E + k * c.gamma_prime * mass_cross_blocks(sp_, s_prev.values)
        return self.blocks.matrix(E), self.M @ m_prev.flat

    def s_system(self, m_prev: FieldVec, s_prev: FieldVec, coeff: Coefficients, k: float, t: float):
        _check(self.space, m_prev, s_prev, k)
        sp_ = self.space
        c = coeff
        d0 = sample_d0(sp_, c, t)
        mq = m_prev.at_quad()
        E = _scalar_blocks(mass_blocks(sp_, 1.0 + k * d0 / c.tau_sf) + k * stiffness_blocks(sp_, d0))
        # anti-diffusive b (m x m) coupling; coercive only under the smallness condition
        E = E - k * c.beta * outer_stiffness_blocks(sp_, m_prev.values, d0)
        E = E + (k / c.tau_J) * mass_cross_blocks(sp_, m_prev.values, d0)
        A = self.blocks.matrix(E)
        b = self.M @ s_prev.flat
        jq = sample_j(sp_, c, t)
        if np.any(jq != 0.0):
            b = b + k * c.beta_prime * self.blocks.load(current_load(sp_, mq, jq))
        return A, b


def current_load(space: FeSpace, mq: np.ndarray, jq: np.ndarray) -> np.ndarray:
    """Element vectors of psi -> (m (x) j, grad psi), shape (nt, nloc, 3)."""
    jg = np.einsum("eqd,eqid->eqi", jq, space.grads)
    return np.einsum("eq,eqi,eqa->eia", space.wdet, jg, mq)


def _check(space: FeSpace, m: FieldVec, s: FieldVec, k: float) -> None:
    if m.space is not space or s.space is not space:
        if len(m.values) != space.num_scalar or len(s.values) != space.num_scalar:
            raise ValueError("fields and space dimensions differ")
    if not k > 0:
        raise ValueError("time step must be positive")


def assemble_m_system(space: FeSpace, m_prev: FieldVec, s_prev: FieldVec, coeff: Coefficients, k: float):
    return Assembler(space).m_system(m_prev, s_prev, coeff, k)


def assemble_s_system(space: FeSpace, m_prev: FieldVec, s_prev: FieldVec, coeff: Coefficients, k: float, t: float = 0.0):
    """``t`` is the time t_n at which the current density is sampled."""
    return Assembler(space).s_system(m_prev, s_prev, coeff, k, t)


FORMS = ("D1", "C1", "B1", "L1", "D2", "C2", "B2", "L2")


def eval_form(form_id: str, phi, v: FieldVec, w: FieldVec, coeff: Coefficients, psi: FieldVec | None = None, t: float = 0.0) -> float:
    """Value of a named bilinear form with ``phi`` (and ``psi``) frozen.

    For L2, ``phi`` is the current density and may be a VectorExpr; only its
    in-plane components enter.
    """
    if form_id not in FORMS:
        raise ValueError(f"unknown form {form_id!r}")
    sp_ = v.space
    if form_id in ("B1", "B2") and psi is None:
        raise ValueError(f"form {form_id} needs a second frozen field psi")
    vq, wq = v.at_quad(), w.at_quad()
    gv, gw = v.grad_at_quad(), w.grad_at_quad()
    if form_id in ("D2", "C2", "B2"):
        d0 = sample_d0(sp_, coeff, t)
    if form_id == "L2":
        if isinstance(phi, VectorExpr):
            xq = sp_.quad_points
            pq = phi(xq[..., 0], xq[..., 1], t)[..., :2]
        else:
            pq = phi.at_quad()[..., :2]
    elif phi is not None:
        pq = phi.at_quad()

    if form_id == "D1":
        q = np.sum(gv * gw, axis=(-1, -2)) + np.sum(vq * wq, axis=-1)
    elif form_id == "C1":
        q = -np.sum(np.cross(pq[..., None, :], np.moveaxis(gv, -1, -2)) * np.moveaxis(gw, -1, -2), axis=(-1, -2))
    elif form_id == "B1":
        q = np.sum(pq * psi.at_quad(), axis=-1) * np.sum(vq * wq, axis=-1)
    elif form_id == "L1":
        q = -np.sum(np.cross(vq, pq) * wq, axis=-1)
    elif form_id == "D2":
        q = d0 * (np.sum(gv * gw, axis=(-1, -2)) + np.sum(vq * wq, axis=-1))
    elif form_id == "C2":
        q = d0 * np.sum(np.cross(vq, pq) * wq, axis=-1)
    elif form_id == "B2":
        psq = psi.at_quad()
        # ((phi (x) psi) grad v) : grad w = sum_b (psi . d_b v)(phi . d_b w)
        q = -coeff.beta * d0 * np.sum(np.einsum("eqc,eqcb->eqb", psq, gv) * np.einsum("eqa,eqab->eqb", pq, gw), axis=-1)
    else:  # L2
        q = -np.sum(np.einsum("eqa,eqb->eqab", vq, pq) * gw, axis=(-1, -2))
    return sp_.integrate(q)
