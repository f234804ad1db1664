"""Energy, the discrete energy-equality residual and the decay/stability monitors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import FieldVec, norm
from .forms import Coefficients
from .sparse import solve_bicgstab


def energy(m: FieldVec, coeff: Coefficients) -> tuple[float, dict[str, float]]:
    """Exchange energy and its three terms (exchange, quartic, quadratic)."""
    space = m.space
    mag2 = np.sum(m.at_quad() ** 2, axis=-1)
    grad2 = np.sum(m.grad_at_quad() ** 2, axis=(-1, -2))
    terms = {
        "exchange": 0.5 * coeff.alpha_prime * space.integrate(grad2),
        "quartic": 0.25 * coeff.kappa * space.integrate(mag2**2),
        "quadratic": coeff.kappa * coeff.mu * space.integrate(mag2),
    }
    return sum(terms.values()), terms


def effective_field(m: FieldVec, coeff: Coefficients, tol: float = 1e-12) -> FieldVec:
    """L2 Riesz representative of phi -> -a'(grad m, grad phi) - k mu (m, phi) - k (|m|^2 m, phi)."""
    space = m.space
    mq = m.at_quad()
    gq = m.grad_at_quad()
    mag2 = np.sum(mq**2, axis=-1)
    pointwise = -(coeff.kappa * coeff.mu + coeff.kappa * mag2)[..., None] * mq
    elem = np.einsum("eq,qi,eqc->eic", space.wdet, space.N, pointwise)
    elem -= coeff.alpha_prime * np.einsum("eq,eqik,eqck->eic", space.wdet, space.grads, gq)
    load = np.zeros((space.num_scalar, 3))
    np.add.at(load, space.element_dofs, elem)
    out = np.column_stack([solve_bicgstab(space.scalar_mass, load[:, c], tol=tol).x for c in range(3)])
    return FieldVec(out, space)


def _inner(space, a: np.ndarray, b: np.ndarray) -> float:
    return space.integrate(np.sum(a * b, axis=-1))


def field_potential(m: FieldVec, coeff: Coefficients) -> float:
    """The functional whose negative L2 gradient is H: the quadratic term carries kappa*mu/2."""
    total, terms = energy(m, coeff)
    return total - 0.5 * terms["quadratic"]


def energy_residual(states, coeff: Coefficients, k: float) -> np.ndarray:
    """r^n = P(m^n) - P(m^0) + k sum_{i=1..n} [alpha ||H^i||^2 - g' (m^i x s^i, H^i)].

    P is :func:`field_potential`, so r^n vanishes as k -> 0. ``states`` must
    hold every step 0..N in order (each with ``.m`` and ``.s``).
    """
    states = list(states)
    if not states:
        raise ValueError("energy residual needs the full sequence of states")
    ns = [st.n for st in states]
    if ns != list(range(ns[0], ns[0] + len(ns))) or ns[0] != 0:
        raise ValueError("energy residual needs a snapshot at every step from n = 0")
    e0 = field_potential(states[0].m, coeff)
    out = np.zeros(len(states))
    acc = 0.0
    for i, st in enumerate(states):
        if i > 0:
            space = st.m.space
            H = effective_field(st.m, coeff).at_quad()
            torque = np.cross(st.m.at_quad(), st.s.at_quad())
            acc += k * (coeff.alpha * _inner(space, H, H) - coeff.gamma_prime * _inner(space, torque, H))
        out[i] = field_potential(st.m, coeff) - e0 + acc
    return out


@dataclass
class DecayReport:
    monotone_m: bool
    monotone_violations: list[int] = field(default_factory=list)
    unit_bound: bool | None = None
    unit_violations: list[int] = field(default_factory=list)
    s_eventual_decay: bool | None = None
    stability_sums: list[float] = field(default_factory=list)
    stability_finite: bool = True
    max_stability_increase: float = 0.0
    load_bound: bool | None = None
    load_violations: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        checks = [self.monotone_m, self.stability_finite]
        checks += [c for c in (self.unit_bound, self.s_eventual_decay, self.load_bound) if c is not None]
        return all(checks)

    def lines(self) -> list[str]:
        out = [
            f"L2 monotonicity of m: {'pass' if self.monotone_m else 'FAIL at ' + str(self.monotone_violations[:5])}",
            f"stability sums finite: {'pass' if self.stability_finite else 'FAIL'}"
            f" (final {self.stability_sums[-1] if self.stability_sums else 0.0:.6g},"
            f" largest step increase {self.max_stability_increase:.3g})",
        ]
        if self.unit_bound is not None:
            out.append(f"unit-coefficient decay bound: {'pass' if self.unit_bound else 'FAIL at ' + str(self.unit_violations[:5])}")
        if self.load_bound is not None:
            out.append(f"per-step L2 growth within load bound: {'pass' if self.load_bound else 'FAIL at ' + str(self.load_violations[:5])}")
        if self.s_eventual_decay is not None:
            out.append(f"spin decay after current switch-off: {'pass' if self.s_eventual_decay else 'FAIL'}")
        return out


def stability_sums(trace, k: float) -> list[float]:
    """||m^n||^2 + ||s^n||^2 + k sum_{i=1..n} (||m^i||_H1^2 + ||s^i||_H1^2) per trace row.

    Assumes the trace holds every step; with sparser traces the sum is a
    rectangle-rule estimate scaled by the row spacing.
    """
    out = []
    acc = 0.0
    prev_n = None
    for row in trace:
        if prev_n is not None:
            acc += k * (row.n - prev_n) * (row.m_H1**2 + row.s_H1**2)
        prev_n = row.n
        out.append(row.m_L2**2 + row.s_L2**2 + acc)
    return out


def load_growth_bound(prev, row, coeff: Coefficients, k: float, j_sup: float, d_lo: float) -> float:
    """Upper bound on (||m^n||^2 + ||s^n||^2) - (||m^{n-1}||^2 + ||s^{n-1}||^2).

    Testing the m-equation with m^n and the s-equation with s^n leaves only the
    reaction term (when mu < 0) and the current load, the latter absorbed into
    half the spin diffusion (valid while the smallness condition holds).
    """
    growth = 2.0 * k * coeff.alpha * coeff.kappa * max(0.0, -coeff.mu) * row.m_L2**2
    load = 2.0 * k * coeff.beta_prime**2 * j_sup**2 * prev.m_L2**2 / d_lo
    return growth + load


def decay_report(
    trace,
    coeff: Coefficients,
    k: float,
    unit: bool = False,
    j_off_time: float | None = None,
    slack: float = 1e-9,
    unit_slack: float = 1e-8,
    j_sup=None,
    d_lo: float | None = None,
) -> DecayReport:
    """Per-step monotonicity (mu >= 0), unit-coefficient bound and stability-sum summary.

    With ``j_sup`` (a number or a function of t giving sup|j|) and ``d_lo``
    (the lower bound of D0), consecutive trace rows are also checked against
    :func:`load_growth_bound`.
    """
    trace = list(trace)
    rep = DecayReport(monotone_m=True)
    if not trace:
        return rep
    if coeff.mu >= 0:
        for prev, row in zip(trace, trace[1:]):
            if row.m_L2 > prev.m_L2 * (1 + slack):
                rep.monotone_violations.append(row.n)
        rep.monotone_m = not rep.monotone_violations
    if unit:
        m0sq = trace[0].m_L2**2
        for row in trace:
            if row.m_L2**2 > (1 + 2 * k) ** (-row.n) * m0sq * (1 + unit_slack):
                rep.unit_violations.append(row.n)
        rep.unit_bound = not rep.unit_violations
    if j_off_time is not None:
        after = [row.s_L2 for row in trace if row.t > j_off_time]
        if len(after) >= 2:
            tail = after[len(after) // 2 :]
            rep.s_eventual_decay = all(b <= a * (1 + slack) for a, b in zip(tail, tail[1:]))
    sums = stability_sums(trace, k)
    rep.stability_sums = sums
    rep.stability_finite = bool(np.all(np.isfinite(sums)))
    if len(sums) > 1:
        rep.max_stability_increase = float(max(0.0, np.max(np.diff(sums))))
    if j_sup is not None and d_lo is not None:
        sup = j_sup if callable(j_sup) else (lambda t, v=float(j_sup): v)
        for prev, row in zip(trace, trace[1:]):
            if row.n != prev.n + 1:
                continue
            bound = load_growth_bound(prev, row, coeff, k, sup(row.t), d_lo)
            before = prev.m_L2**2 + prev.s_L2**2
            after = row.m_L2**2 + row.s_L2**2
            if after - before > bound + slack * before:
                rep.load_violations.append(row.n)
        rep.load_bound = not rep.load_violations
    return rep
