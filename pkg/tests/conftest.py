import numpy as np
import pytest
import sympy

from sdllb.expr import Expr, VectorExpr
from sdllb.fem import FieldVec, build_space
from sdllb.forms import Coefficients
from sdllb.mesh import Mesh, unit_square_mesh

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def reference_triangle_mesh() -> Mesh:
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), "square")


def symbolic_p1_blocks():
    """Exact P1 mass and stiffness on the reference triangle by symbolic integration."""
    x, y = sympy.symbols("x y")
    lam = [1 - x - y, x, y]
    mass = sympy.Matrix(3, 3, lambda i, j: sympy.integrate(sympy.integrate(lam[i] * lam[j], (y, 0, 1 - x)), (x, 0, 1)))
    grad = [(sympy.diff(f, x), sympy.diff(f, y)) for f in lam]
    stiff = sympy.Matrix(
        3, 3,
        lambda i, j: sympy.integrate(
            sympy.integrate(grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1], (y, 0, 1 - x)), (x, 0, 1)
        ),
    )
    return np.array(mass.tolist(), dtype=float), np.array(stiff.tolist(), dtype=float)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(space, rng, scale=1.0):
    return FieldVec(rng.uniform(-scale, scale, (space.num_scalar, 3)), space)


def physical_coefficients(**kw):
    base = dict(
        gamma=1.3, alpha=0.9, gamma_prime=0.7, alpha_prime=0.4, kappa=1.5, mu=0.8, tau_sf=0.6,
        tau_J=0.3, beta=0.2, beta_prime=0.5, D0=Expr.parse("1 + 0.3*x*y"), j=VectorExpr.parse(["y", "1", "0"]),
    )
    base.update(kw)
    return Coefficients(**base)
