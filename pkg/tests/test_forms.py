import numpy as np
import pytest

from sdllb.expr import Expr, VectorExpr
from sdllb.fem import FieldVec, build_space, norm
from sdllb.forms import (
    Assembler, BlockAssembler, Coefficients, D0BoundsError, assemble_m_system, assemble_s_system,
    cross_matrix, eval_form, exchange_cross_blocks, mass_cross_blocks, mass_matrix, scalar_mass_matrix,
    scalar_stiffness_matrix, stiffness_matrix,
)
from sdllb.mesh import unit_disk_mesh, unit_square_mesh
from sdllb.sparse import solve_bicgstab

from conftest import physical_coefficients, random_field, reference_triangle_mesh, symbolic_p1_blocks


def test_cross_matrix():
    v, u = np.array([0.3, -1.2, 2.0]), np.array([1.0, 0.5, -0.7])
    assert np.allclose(cross_matrix(v) @ u, np.cross(v, u), atol=1e-15)


def test_reference_element_blocks_match_symbolic_oracle():
    sp_ = build_space(reference_triangle_mesh(), 1)
    mass, stiff = symbolic_p1_blocks()
    assert np.allclose(mass, np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=0)
    assert np.allclose(scalar_mass_matrix(sp_).toarray(), mass, atol=1e-14, rtol=0)
    assert np.allclose(scalar_stiffness_matrix(sp_).toarray(), stiff, atol=1e-14, rtol=0)
    assert np.allclose(stiff, np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]) / 2, atol=0)


def test_mass_totals_and_weights():
    sp_ = build_space(unit_square_mesh(5), 2)
    assert scalar_mass_matrix(sp_).sum() == pytest.approx(4.0, abs=1e-12)
    M = mass_matrix(sp_)
    assert np.allclose((mass_matrix(sp_, 2.0) - 2 * M).data, 0, atol=1e-15)
    K = stiffness_matrix(sp_)
    assert np.allclose((stiffness_matrix(sp_, Expr.parse("3")) - 3 * K).data, 0, atol=1e-13)
    assert np.max(np.abs(scalar_stiffness_matrix(sp_) @ np.ones(sp_.num_scalar))) <= 1e-13


def test_mass_block_diagonal_across_components():
    sp_ = build_space(unit_square_mesh(2), 1)
    M = mass_matrix(sp_).tocoo()
    assert np.all(M.row % 3 == M.col % 3)


def test_symmetry():
    sp_ = build_space(unit_disk_mesh(2), 2)
    for A in (mass_matrix(sp_, Expr.parse("1 + x^2")), stiffness_matrix(sp_, Expr.parse("2 + y"))):
        assert abs(A - A.T).max() <= 1e-13 * abs(A).max()


def test_zero_fields_give_zero_solution():
    sp_ = build_space(unit_square_mesh(3), 1)
    c = physical_coefficients(j=VectorExpr.parse(["0", "0", "0"]))
    z = sp_.zeros()
    A, b = assemble_m_system(sp_, z, z, c, 0.1)
    expect = mass_matrix(sp_) + 0.1 * (c.alpha * c.alpha_prime * stiffness_matrix(sp_) + c.alpha * c.kappa * c.mu * mass_matrix(sp_))
    assert abs(A - expect).max() <= 1e-14
    assert not b.any()
    A, b = assemble_s_system(sp_, z, z, c, 0.1)
    assert not b.any()
    assert not solve_bicgstab(A, b).x.any()


def _constant(space, v):
    return FieldVec(np.tile(v, (space.num_scalar, 1)), space)


@pytest.mark.parametrize("degree", [1, 2])
def test_constant_m_reduction(degree):
    sp_ = build_space(unit_disk_mesh(1), degree)
    c = physical_coefficients()
    cvec, k = np.array([0.3, -0.2, 0.5]), 0.05
    A, b = assemble_m_system(sp_, _constant(sp_, cvec), sp_.zeros(), c, k)
    u = solve_bicgstab(A, b, tol=1e-12).x.reshape(-1, 3)
    expected = cvec / (1 + k * c.alpha * c.kappa * c.mu + k * c.alpha * c.kappa * cvec @ cvec)
    assert np.allclose(u, expected, atol=1e-10, rtol=0)


def test_constant_s_reduction():
    sp_ = build_space(unit_square_mesh(3), 2)
    c = physical_coefficients(D0=Expr.parse("0.8"), j=VectorExpr.parse(["0", "0", "0"]))
    cm, d, k = np.array([0.1, 0.2, -0.15]), np.array([0.1, 0.4, -0.2]), 0.1
    A, b = assemble_s_system(sp_, _constant(sp_, cm), _constant(sp_, d), c, k)
    u = solve_bicgstab(A, b, tol=1e-12).x.reshape(-1, 3)
    G = np.column_stack([np.cross(e, cm) for e in np.eye(3)])  # G u = u x c
    dense = np.eye(3) * (1 + k * 0.8 / c.tau_sf) + (k * 0.8 / c.tau_J) * G
    assert np.allclose(u, np.linalg.solve(dense, d), atol=1e-10, rtol=0)


@pytest.mark.parametrize("degree", [1, 2])
def test_cross_blocks_are_skew(degree, rng):
    sp_ = build_space(unit_disk_mesh(2), degree)
    ba = BlockAssembler(sp_)
    phi = random_field(sp_, rng).values
    d0 = 1 + rng.random(sp_.wdet.shape)
    for blocks in (exchange_cross_blocks(sp_, phi), mass_cross_blocks(sp_, phi), mass_cross_blocks(sp_, phi, d0)):
        B = ba.matrix(blocks)
        assert abs(B + B.T).max() <= 1e-12 * abs(B).max()
        for _ in range(5):
            v = rng.normal(size=sp_.num_dofs)
            assert abs(v @ (B @ v)) <= 1e-12 * (v @ v) * max(1.0, abs(B).max())


def test_forms_C1_D1_B2(rng):
    sp_ = build_space(unit_square_mesh(3), 2)
    c = physical_coefficients()
    for _ in range(10):
        phi, v = random_field(sp_, rng), random_field(sp_, rng)
        scale = norm(phi) * norm(v, "H1") ** 2
        assert abs(eval_form("C1", phi, v, v, c)) <= 1e-12 * scale
        assert eval_form("D1", None, v, v, c) == pytest.approx(norm(v, "H1") ** 2, rel=1e-12)
        assert eval_form("B2", phi, v, v, c, psi=phi) <= 0.0


def test_b_forms_need_psi():
    sp_ = build_space(unit_square_mesh(1), 1)
    with pytest.raises(ValueError):
        eval_form("B1", sp_.zeros(), sp_.zeros(), sp_.zeros(), Coefficients())


def test_unit_coefficient_systems_match_named_forms(rng):
    """A_m = M + k(D1 + C1 + B1 - L1) and A_s = M + k(D2 + C2 + B2), b_s = M s - k L2."""
    sp_ = build_space(unit_square_mesh(3), 1)
    unit = Coefficients(beta=0.3, D0=Expr.parse("1 + 0.5*x^2"), j=VectorExpr.parse(["y", "1 - x", "0"]))
    m, s, v, w = (random_field(sp_, rng, 0.3) for _ in range(4))
    k = 0.02
    asm = Assembler(sp_)
    A, _ = asm.m_system(m, s, unit, k)
    lhs = w.flat @ (A @ v.flat)
    forms = sum(eval_form(f, m, v, w, unit, psi=m) for f in ("D1", "C1", "B1")) - eval_form("L1", s, v, w, unit)
    assert lhs == pytest.approx(w.flat @ (asm.M @ v.flat) + k * forms, rel=1e-12)

    A, b = asm.s_system(m, s, unit, k, 0.0)
    forms = sum(eval_form(f, m, v, w, unit, psi=m) for f in ("D2", "C2", "B2"))
    assert w.flat @ (A @ v.flat) == pytest.approx(w.flat @ (asm.M @ v.flat) + k * forms, rel=1e-12)
    assert w.flat @ b == pytest.approx(w.flat @ (asm.M @ s.flat) - k * eval_form("L2", unit.j, m, w, unit), rel=1e-12)


def test_s_system_ignores_new_m(rng):
    sp_ = build_space(unit_square_mesh(2), 1)
    c = physical_coefficients()
    m, s = random_field(sp_, rng, 0.1), random_field(sp_, rng, 0.1)
    A1, b1 = assemble_s_system(sp_, m, s, c, 0.01, 0.3)
    A2, b2 = assemble_s_system(sp_, m, s, c, 0.01, 0.3)
    assert (A1 != A2).nnz == 0 and np.array_equal(b1, b2)


def test_d0_bound_violation():
    sp_ = build_space(unit_square_mesh(2), 1)
    c = physical_coefficients(D0=Expr.parse("x"))
    with pytest.raises(D0BoundsError):
        assemble_s_system(sp_, sp_.zeros(), sp_.zeros(), c, 0.1)


def test_discrete_coercivity_under_smallness(rng):
    sp_ = build_space(unit_square_mesh(4), 1)
    c = physical_coefficients(beta=0.9, D0=Expr.parse("1 + 0.5*x"))
    d_lo, d_hi = 0.5, 1.5
    bound = np.sqrt(d_lo / (2 * c.beta * d_hi))
    raw = rng.normal(size=(sp_.num_scalar, 3))
    m = FieldVec(0.99 * bound * raw / np.linalg.norm(raw, axis=1).max(), sp_)
    A, _ = assemble_s_system(sp_, m, sp_.zeros(), c, 0.5)
    S = 0.5 * (A + A.T)
    for _ in range(100):
        v = rng.normal(size=sp_.num_dofs)
        assert v @ (S @ v) > 0


def _manufactured():
    m = VectorExpr.parse(["0.1*exp(-t)*cos(pi*x)*cos(pi*y)", "0.05*sin(x + t)", "0.1 + 0.02*t*y"])
    dm = VectorExpr.parse(["-0.1*exp(-t)*cos(pi*x)*cos(pi*y)", "0.05*cos(x + t)", "0.02*y"])
    s = VectorExpr.parse(["0.1*x*y", "0.05", "-0.1*cos(pi*x)"])
    return m, dm, s


def test_consistency_first_order_in_k():
    sp_ = build_space(unit_square_mesh(4), 1)
    c = physical_coefficients()
    m, dm, s = _manufactured()
    t = 0.2
    asm = Assembler(sp_)
    mt, st = sp_.interpolate(m, t), sp_.interpolate(s, t)
    # operator at frozen coefficients, from any k
    A1, _ = asm.m_system(mt, st, c, 1.0)
    op = A1 - asm.M
    weak = asm.M @ sp_.interpolate(dm, t).flat + op @ mt.flat
    gaps = []
    for k in (1e-2, 5e-3):
        A, b = asm.m_system(mt, st, c, k)
        u = sp_.interpolate(m, t + k).flat
        gaps.append(np.linalg.norm((A @ u - b) / k - weak))
    assert gaps[0] / gaps[1] == pytest.approx(2.0, abs=0.2)
