import math
from math import factorial

import numpy as np
import pytest

from sdllb.expr import VectorExpr
from sdllb.fem import (
    FieldVec, OutsideDomainError, ParentTransfer, build_space, evaluate, l2_project, norm, prolong,
    shape_functions,
)
from sdllb.mesh import refine, unit_disk_mesh, unit_square_mesh
from sdllb.quadrature import quadrature_for


def square_monomial(a, b):
    """Exact integral of x^a y^b over [-1, 1]^2."""
    one = lambda p: 0.0 if p % 2 else 2.0 / (p + 1)
    return one(a) * one(b)


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [2, 4, 8])
def test_rule_exactness(degree):
    q = quadrature_for(degree)
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-14)
    x, y = q.xi.T
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = 0.5 * np.sum(q.weights * x**a * y**b)
            assert approx == pytest.approx(monomial_integral(a, b), rel=1e-13, abs=1e-16)


def test_midpoint_rule_layout():
    q = quadrature_for(2)
    assert len(q.weights) == 3
    assert np.allclose(q.weights, 1 / 3)
    assert {tuple(p) for p in q.points} == {(0.5, 0.5, 0.0), (0.5, 0.0, 0.5), (0.0, 0.5, 0.5)}
    assert 0.5 * q.weights.sum() == 0.5


def test_degree4_x2y2():
    q = quadrature_for(4)
    x, y = q.xi.T
    assert 0.5 * np.sum(q.weights * x**2 * y**2) == pytest.approx(1 / 180, abs=1e-16)
    assert len(quadrature_for(8).weights) == 16


def test_unsupported_rule():
    with pytest.raises(ValueError):
        quadrature_for(3)


def test_dof_counts():
    sq = unit_square_mesh(1)
    s1 = build_space(sq, 1)
    assert (s1.num_scalar, s1.num_dofs) == (4, 12)
    assert build_space(sq, 2).num_scalar == 9
    assert build_space(unit_disk_mesh(0), 1).num_scalar == 7


def test_p2_dof_numbering_vertices_then_sorted_edges():
    mesh = unit_square_mesh(2)
    sp_ = build_space(mesh, 2)
    nv = mesh.num_vertices
    assert np.array_equal(sp_.dof_coords[:nv], mesh.vertices)
    e = mesh.edges
    assert np.allclose(sp_.dof_coords[nv:], 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]]))
    assert [tuple(p) for p in e] == sorted(tuple(p) for p in e)
    # shared edges map to the same dof in both neighbours
    for t, dofs in enumerate(sp_.element_dofs):
        for i in range(3):
            a, b = mesh.triangles[t][(i + 1) % 3], mesh.triangles[t][(i + 2) % 3]
            mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
            assert np.allclose(sp_.dof_coords[dofs[3 + i]], mid)


@pytest.mark.parametrize("degree", [1, 2])
def test_partition_of_unity(degree):
    q = quadrature_for(8)
    vals, grads = shape_functions(degree, q.xi)
    assert np.max(np.abs(vals.sum(axis=1) - 1)) <= 1e-14
    assert np.max(np.abs(grads.sum(axis=1))) <= 1e-13


@pytest.mark.parametrize("degree", [1, 2])
def test_reproduces_polynomials(degree):
    sp_ = build_space(unit_square_mesh(3), degree)
    monos = ["1", "x", "y"] + (["x^2", "x*y", "y^2"] if degree == 2 else [])
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.99, 0.99, size=(20, 2))
    for mono in monos:
        f = VectorExpr.parse([mono, "0", "0"])
        u = sp_.interpolate(f)
        for x, y in pts:
            assert evaluate(u, x, y)[0] == pytest.approx(f(x, y)[0], abs=1e-13)


def test_projection_of_constant():
    sp_ = build_space(unit_disk_mesh(2), 1)
    u = l2_project(VectorExpr.parse(["1", "2", "3"]), sp_)
    assert np.allclose(u.values, [1, 2, 3], atol=1e-10)


@pytest.mark.parametrize("degree", [1, 2])
def test_projection_idempotent_on_space(degree):
    sp_ = build_space(unit_square_mesh(4), degree)
    f = VectorExpr.parse(["x", "x*y" if degree == 2 else "y", "1 - x"])
    assert np.allclose(l2_project(f, sp_).values, sp_.interpolate(f).values, atol=1e-10)


def test_projection_rate_p1():
    f = VectorExpr.parse(["sin(pi*x)", "0", "0"])
    errs = []
    for n in (8, 16):
        sp_ = build_space(unit_square_mesh(n), 1)
        u = l2_project(f, sp_)
        xq = sp_.quad_points
        errs.append(math.sqrt(sp_.integrate(np.sum((u.at_quad() - f(xq[..., 0], xq[..., 1])) ** 2, -1))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_projection_orthogonality():
    sp_ = build_space(unit_square_mesh(4), 2)
    f = VectorExpr.parse(["exp(x)*sin(y)", "cos(3*x*y)", "x^3"])
    u = l2_project(f, sp_, tol=1e-13)
    xq = sp_.quad_points
    diff = u.at_quad() - f(xq[..., 0], xq[..., 1])
    rng = np.random.default_rng(1)
    fnorm = math.sqrt(sp_.integrate(np.sum(f(xq[..., 0], xq[..., 1]) ** 2, -1)))
    for i in rng.choice(sp_.num_scalar, 10, replace=False):
        coeff = np.zeros((sp_.num_scalar, 3))
        coeff[i, :] = 1.0
        chi = FieldVec(coeff, sp_)
        inner = sp_.integrate(np.sum(diff * chi.at_quad(), -1))
        assert abs(inner) <= 1e-10 * fnorm * norm(chi)


def test_prolong_constant_and_linear():
    coarse = unit_square_mesh(2)
    fine, rmap = refine(coarse)
    cs, fs = build_space(coarse, 1), build_space(fine, 1)
    c = cs.interpolate(VectorExpr.parse(["1", "-2", "0.5"]))
    assert np.array_equal(prolong(c, rmap, fs).values, np.tile([1, -2, 0.5], (fs.num_scalar, 1)))
    lin = VectorExpr.parse(["x+y", "0", "0"])
    u = prolong(cs.interpolate(lin), rmap, fs)
    assert np.allclose(u.values, fs.interpolate(lin).values, atol=1e-15)
    assert norm(u) == pytest.approx(norm(cs.interpolate(lin)), abs=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_prolong_preserves_l2_norm_of_random_field(degree):
    coarse = unit_square_mesh(3)
    fine, rmap = refine(coarse)
    cs, fs = build_space(coarse, degree), build_space(fine, degree)
    u = FieldVec(np.random.default_rng(2).normal(size=(cs.num_scalar, 3)), cs)
    assert norm(prolong(u, rmap, fs)) == pytest.approx(norm(u), rel=1e-12)
    assert norm(prolong(u, rmap, fs), "H1") == pytest.approx(norm(u, "H1"), rel=1e-12)


def test_prolong_lineage_mismatch():
    coarse = unit_square_mesh(2)
    _, rmap = refine(coarse)
    with pytest.raises(ValueError):
        prolong(build_space(coarse, 1).zeros(), rmap, build_space(unit_square_mesh(3), 1))


def test_parent_transfer_matches_prolongation_on_nested_meshes():
    coarse = unit_square_mesh(2)
    fine, rmap = refine(coarse)
    cs, fs = build_space(coarse, 2), build_space(fine, 2)
    rng = np.random.default_rng(3)
    u = FieldVec(rng.normal(size=(cs.num_scalar, 3)), cs)
    w = FieldVec(rng.normal(size=(fs.num_scalar, 3)), fs)
    l2, h1 = ParentTransfer(cs, fs, rmap).difference_norms(w, u)
    d = w - prolong(u, rmap, fs)
    assert l2 == pytest.approx(norm(d), rel=1e-12)
    assert h1 == pytest.approx(norm(d, "H1"), rel=1e-12)


def test_evaluate_nodal_and_barycentre():
    sp_ = build_space(unit_square_mesh(2), 1)
    rng = np.random.default_rng(4)
    u = FieldVec(rng.normal(size=(sp_.num_scalar, 3)), sp_)
    for i, (x, y) in enumerate(sp_.dof_coords):
        assert evaluate(u, x, y) == tuple(u.values[i])
    tri = sp_.mesh.triangles[3]
    cx, cy = sp_.mesh.vertices[tri].mean(axis=0)
    assert np.allclose(evaluate(u, cx, cy), u.values[tri].mean(axis=0), atol=1e-15)


def test_evaluate_p2_quadratic():
    sp_ = build_space(unit_disk_mesh(2), 2)
    u = sp_.interpolate(VectorExpr.parse(["x^2", "0", "0"]))
    assert evaluate(u, 0.31, -0.17)[0] == pytest.approx(0.31**2, abs=1e-13)


def test_evaluate_outside():
    sp_ = build_space(unit_square_mesh(2), 1)
    u = sp_.interpolate(VectorExpr.parse(["x", "0", "0"]))
    assert evaluate(u, 1.0 + 5e-10, 0.0)[0] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(OutsideDomainError):
        evaluate(u, 1.1, 0.0)


def test_norm_examples():
    sp_ = build_space(unit_square_mesh(4), 1)
    assert norm(sp_.interpolate(VectorExpr.parse(["1", "0", "0"]))) == pytest.approx(2.0, abs=1e-14)
    x = sp_.interpolate(VectorExpr.parse(["x", "0", "0"]))
    assert norm(x, "H1semi") == pytest.approx(2.0, abs=1e-14)
    # int_{-1}^{1} int_{-1}^{1} x^4 dy dx = (2/5) * 2
    assert norm(x, "L4") == pytest.approx((square_monomial(4, 0)) ** 0.25, abs=1e-14)
    assert norm(x, "NodalMax") == 1.0


def test_norm_consistency():
    sp_ = build_space(unit_disk_mesh(2), 2)
    u = FieldVec(np.random.default_rng(5).normal(size=(sp_.num_scalar, 3)), sp_)
    assert norm(u, "H1") ** 2 == pytest.approx(norm(u) ** 2 + norm(u, "H1semi") ** 2, rel=1e-12)
