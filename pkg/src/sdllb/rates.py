"""Extrapolated spatial rates and temporal self-convergence."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig, num_steps
from .fem import FeSpace, ParentTransfer, build_space, norm
from .mesh import refine
from .stepper import Stepper, TraceRow, build_mesh


def log2_ratio(coarse: float, fine: float) -> float:
    if fine == 0.0 or coarse == 0.0:
        return math.nan
    return math.log2(coarse / fine)


def rates(errors) -> list[float]:
    """log2(e_i / e_{i+1}) for consecutive entries; nan where undefined."""
    return [log2_ratio(a, b) for a, b in zip(errors, errors[1:])]


QUANTITIES = ("eL2_m", "eH1_m", "eL2_s", "eH1_s")


@dataclass
class RateTable:
    """One row per mesh (or step) size; ``rates[q][i]`` compares row i with row i+1."""

    h: list[float]
    one_over_h: list[float]
    errors: dict[str, list[float]]
    kind: str = "h"
    traces: list[list[TraceRow]] = field(default_factory=list)

    @property
    def rates(self) -> dict[str, list[float]]:
        return {q: rates(v) for q, v in self.errors.items()}

    def rows(self) -> list[dict]:
        out = []
        r = self.rates
        for i in range(len(self.h)):
            row = {"one_over_h" if self.kind == "h" else "k": self.one_over_h[i] if self.kind == "h" else self.h[i]}
            row.update({q: self.errors[q][i] for q in QUANTITIES})
            for q in QUANTITIES:
                row["rate" + q[1:]] = r[q][i - 1] if i > 0 else math.nan
            out.append(row)
        return out

    def columns(self) -> list[str]:
        first = "one_over_h" if self.kind == "h" else "k"
        return [first, *QUANTITIES, *("rate" + q[1:] for q in QUANTITIES)]


def _ladder(config: SimConfig, count: int):
    mesh = build_mesh(config)
    meshes, maps = [mesh], []
    for _ in range(count - 1):
        mesh, rmap = refine(mesh)
        meshes.append(mesh)
        maps.append(rmap)
    return meshes, maps


def h_rate_study(config: SimConfig, levels: int = 3, keep_traces: bool = True) -> RateTable:
    """Run ``levels + 1`` nested meshes in lockstep and tabulate max_n ||m_h^n - m_{h/2}^n||.

    Row i compares mesh i with mesh i+1; the maximum runs over every step that
    is a multiple of ``trace_every`` (n = 0 included).
    """
    if levels < 3:
        raise ValueError("a rate study needs at least 3 levels")
    meshes, maps = _ladder(config, levels + 1)
    spaces = [build_space(mesh, config.degree) for mesh in meshes]
    transfers = [ParentTransfer(spaces[i], spaces[i + 1], maps[i]) for i in range(levels)]
    steppers = [Stepper(config, sp_) for sp_ in spaces]
    maxima = {q: np.zeros(levels) for q in QUANTITIES}
    traces: list[list[TraceRow]] = [[] for _ in spaces]
    try:
        for states in zip(*(st.states() for st in steppers)):
            n = states[0].n
            if n % config.trace_every:
                continue
            if keep_traces:
                for i, (st, state) in enumerate(zip(steppers, states)):
                    traces[i].append(st.trace_row(state))
            for i, tr in enumerate(transfers):
                coarse, fine = states[i], states[i + 1]
                ml2, mh1 = tr.difference_norms(fine.m, coarse.m)
                sl2, sh1 = tr.difference_norms(fine.s, coarse.s)
                for q, v in zip(QUANTITIES, (ml2, mh1, sl2, sh1)):
                    maxima[q][i] = max(maxima[q][i], v)
    finally:
        for st in steppers:
            st.close()
    h = [float(mesh.edge_lengths().max()) for mesh in meshes[:levels]]
    inv = [float(m.n) if m.n is not None else 1.0 / hh for m, hh in zip(meshes[:levels], h)]
    return RateTable(h, inv, {q: list(map(float, v)) for q, v in maxima.items()}, "h", traces if keep_traces else [])


def k_rate_study(config: SimConfig, k_list, keep_traces: bool = True, successive: bool = False) -> RateTable:
    """Final-time errors against the run with the smallest step (last in ``k_list``).

    With ``successive`` each run is compared with the next smaller step instead,
    which removes the bias of a fixed reference from the rates.
    """
    k_list = [float(k) for k in k_list]
    if len(k_list) < 2:
        raise ValueError("need at least two step sizes")
    if any(b >= a for a, b in zip(k_list, k_list[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    finals = [num_steps(config.T, k) * k for k in k_list]
    if any(abs(f - finals[0]) > 1e-9 * max(abs(finals[0]), 1e-300) for f in finals) or finals[0] == 0.0:
        raise ValueError(f"final times {finals} are not aligned across the step sizes")
    space = build_space(build_mesh(config), config.degree)
    results, traces = [], []
    for k in k_list:
        cfg = config.with_(k=k)
        st = Stepper(cfg, space)
        trace = []
        try:
            for state in st.states():
                if keep_traces and state.n % cfg.trace_every == 0:
                    trace.append(st.trace_row(state))
        finally:
            st.close()
        results.append(state)
        traces.append(trace)
    errors = {q: [] for q in QUANTITIES}
    for i, state in enumerate(results[:-1]):
        ref = results[i + 1] if successive else results[-1]
        dm, ds = state.m - ref.m, state.s - ref.s
        errors["eL2_m"].append(norm(dm, "L2"))
        errors["eH1_m"].append(norm(dm, "H1"))
        errors["eL2_s"].append(norm(ds, "L2"))
        errors["eH1_s"].append(norm(ds, "H1"))
    return RateTable(k_list[:-1], [1.0 / k for k in k_list[:-1]], errors, "k", traces)
