"""Time loop: L2-projected initial data, then two decoupled linear solves per step."""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import DecayReport, decay_report, energy
from .config import SimConfig
from .expr import VectorExpr
from .fem import FeSpace, FieldVec, build_space, l2_project, norm
from .forms import Assembler, Coefficients, d0_bounds, sample_j
from .mesh import Mesh, unit_disk_mesh, unit_square_mesh
from .sparse import SolverError, solve_bicgstab

log = logging.getLogger(__name__)


class SmallnessWarning(UserWarning):
    """Nodal |m|^2 reached D_*/(2 beta D^*); the spin system may lose coercivity."""


class StepError(RuntimeError):
    def __init__(self, step: int, which: str, err: SolverError):
        super().__init__(f"step {step}: {which}-system solve failed: {err}")
        self.step = step
        self.which = which
        self.residual = err.residual


@dataclass
class SimState:
    n: int
    t: float
    m: FieldVec
    s: FieldVec
    iters_m: int = 0
    iters_s: int = 0


@dataclass
class TraceRow:
    n: int
    t: float
    m_L2: float
    m_H1: float
    m_max: float
    s_L2: float
    s_H1: float
    energy: float
    iters_m: int
    iters_s: int
    small_ok: bool

    COLUMNS = ("n", "t", "m_L2", "m_H1", "m_max", "s_L2", "s_H1", "energy", "iters_m", "iters_s", "small_ok")


def build_mesh(config: SimConfig) -> Mesh:
    if config.domain == "square":
        return unit_square_mesh(config.subdivisions)
    return unit_disk_mesh(config.level)


def thread_count() -> int:
    value = os.environ.get("SDLLB_THREADS")
    if value:
        return max(1, int(value))
    return max(1, min(2, os.cpu_count() or 1))


def smallness_threshold(space: FeSpace, coeff: Coefficients) -> float:
    """D_* / (2 beta D^*), compared against nodal max |m|^2."""
    lo, hi = d0_bounds(space, coeff)
    return lo / (2.0 * coeff.beta * hi)


def coefficients_at(config: SimConfig, t: float) -> Coefficients:
    c = config.coefficients
    if config.j_off_time is not None and t > config.j_off_time:
        return replace(c, j=VectorExpr.parse(["0", "0", "0"]))
    return c


class Stepper:
    """Holds the per-space caches for one run."""

    def __init__(self, config: SimConfig, space: FeSpace):
        self.config = config
        self.space = space
        self.assembler = Assembler(space)
        self.threshold = smallness_threshold(space, config.coefficients)
        self._pool = ThreadPoolExecutor(max_workers=2) if thread_count() > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def small_ok(self, m: FieldVec) -> bool:
        return norm(m, "NodalMax") ** 2 < self.threshold

    def init_state(self) -> SimState:
        cfg = self.config
        m = l2_project(cfg.m0, self.space)
        s = l2_project(cfg.s0, self.space)
        if not self.small_ok(m):
            warnings.warn(
                f"initial nodal max |m|^2 = {norm(m, 'NodalMax') ** 2:.4g} is not below "
                f"D_*/(2 beta D^*) = {self.threshold:.4g}",
                SmallnessWarning,
                stacklevel=2,
            )
        return SimState(0, 0.0, m, s)

    def solve_m(self, state: SimState):
        cfg = self.config
        A, b = self.assembler.m_system(state.m, state.s, cfg.coefficients, cfg.k)
        x0 = state.m.flat if cfg.solver.warm_start else None
        return solve_bicgstab(A, b, tol=cfg.solver.tol, maxiter=cfg.solver.maxiter, x0=x0)

    def solve_s(self, state: SimState):
        cfg = self.config
        t_new = (state.n + 1) * cfg.k
        A, b = self.assembler.s_system(state.m, state.s, coefficients_at(cfg, t_new), cfg.k, t_new)
        x0 = state.s.flat if cfg.solver.warm_start else None
        return solve_bicgstab(A, b, tol=cfg.solver.tol, maxiter=cfg.solver.maxiter, x0=x0)

    def step(self, state: SimState, order: str = "ms") -> SimState:
        """Advance one step; both solves read only ``state``, so they run concurrently."""
        n_new = state.n + 1
        jobs = {"m": self.solve_m, "s": self.solve_s}
        results = {}
        if self._pool is not None:
            futures = {key: self._pool.submit(jobs[key], state) for key in order}
            for key in order:
                try:
                    results[key] = futures[key].result()
                except SolverError as err:
                    raise StepError(n_new, key, err) from err
        else:
            for key in order:
                try:
                    results[key] = jobs[key](state)
                except SolverError as err:
                    raise StepError(n_new, key, err) from err
        m = FieldVec.from_flat(results["m"].x, self.space)
        s = FieldVec.from_flat(results["s"].x, self.space)
        if not self.small_ok(m):
            log.warning("step %d: smallness condition violated (nodal max |m|^2 >= %.4g)", n_new, self.threshold)
        return SimState(n_new, n_new * self.config.k, m, s, results["m"].iterations, results["s"].iterations)

    def trace_row(self, state: SimState) -> TraceRow:
        m, s = state.m, state.s
        return TraceRow(
            n=state.n,
            t=state.t,
            m_L2=norm(m, "L2"),
            m_H1=norm(m, "H1"),
            m_max=norm(m, "NodalMax"),
            s_L2=norm(s, "L2"),
            s_H1=norm(s, "H1"),
            energy=energy(m, self.config.coefficients)[0],
            iters_m=state.iters_m,
            iters_s=state.iters_s,
            small_ok=self.small_ok(m),
        )

    def states(self):
        """Generator over states n = 0..N."""
        state = self.init_state()
        yield state
        for _ in range(self.config.num_steps):
            state = self.step(state)
            yield state


def init_state(config: SimConfig, space: FeSpace) -> SimState:
    return Stepper(config, space).init_state()


def step(state: SimState, config: SimConfig, space: FeSpace) -> SimState:
    stepper = Stepper(config, space)
    try:
        return stepper.step(state)
    finally:
        stepper.close()


@dataclass
class RunResult:
    final: SimState
    trace: list[TraceRow]
    snapshots: dict[int, SimState] = field(default_factory=dict)
    space: FeSpace | None = None


def snapshot_steps(config: SimConfig) -> set[int]:
    N = config.num_steps
    return {min(N, int(round(t / config.k))) for t in config.snapshot_times if t <= config.T * (1 + 1e-12)}


def run(config: SimConfig, space: FeSpace | None = None, keep_all: bool = False) -> RunResult:
    """Run N = floor(T/k) steps. ``keep_all`` retains every state as a snapshot."""
    if space is None:
        space = build_space(build_mesh(config), config.degree)
    stepper = Stepper(config, space)
    wanted = snapshot_steps(config)
    trace: list[TraceRow] = []
    snaps: dict[int, SimState] = {}
    state = None
    try:
        for state in stepper.states():
            if state.n % config.trace_every == 0:
                trace.append(stepper.trace_row(state))
            if keep_all or state.n in wanted:
                snaps[state.n] = state
    finally:
        stepper.close()
    return RunResult(state, trace, snaps, space)


def trace_report(config: SimConfig, trace: list[TraceRow], space: FeSpace | None = None) -> DecayReport:
    """Decay and stability checks for a trace, including the per-step load bound."""
    if space is None:
        space = build_space(build_mesh(config), config.degree)
    d_lo, _ = d0_bounds(space, config.coefficients)

    def j_sup(t: float) -> float:
        j = sample_j(space, coefficients_at(config, t), t)
        return float(np.sqrt(np.sum(j * j, axis=-1)).max())

    return decay_report(
        trace, config.coefficients, config.k, unit=config.unit,
        j_off_time=config.j_off_time, j_sup=j_sup, d_lo=d_lo,
    )


def run_report(config: SimConfig, result: RunResult) -> DecayReport:
    return trace_report(config, result.trace, result.space)
