"""Simulation configuration: JSON loading, validation and the built-in presets."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .expr import Expr, ExprError, VectorExpr
from .forms import SCALARS, Coefficients


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    maxiter: int | None = None  # None means 10 x system size
    warm_start: bool = False


@dataclass(frozen=True)
class SimConfig:
    domain: str
    degree: int = 1
    level: int = 0
    n: int | None = None  # square only: subdivisions per side, overrides level
    k: float = 1e-3
    T: float = 0.0
    coefficients: Coefficients = field(default_factory=Coefficients)
    m0: VectorExpr = field(default_factory=lambda: VectorExpr.parse(["0", "0", "0"]))
    s0: VectorExpr = field(default_factory=lambda: VectorExpr.parse(["0", "0", "0"]))
    trace_every: int = 1
    snapshot_times: tuple[float, ...] = ()
    solver: SolverOptions = field(default_factory=SolverOptions)
    preset: str | None = None
    j_off_time: float | None = None

    def __post_init__(self):
        if self.domain not in ("square", "disk"):
            raise ConfigError(f"domain must be 'square' or 'disk', got {self.domain!r}")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ConfigError("k must be positive")
        if not self.T >= 0:
            raise ConfigError("T must be nonnegative")
        if self.level < 0:
            raise ConfigError("level must be nonnegative")
        if self.n is not None and (self.domain != "square" or self.n < 1):
            raise ConfigError("n is only valid for the square domain and must be positive")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be at least 1")

    @property
    def num_steps(self) -> int:
        return num_steps(self.T, self.k)

    @property
    def unit(self) -> bool:
        """Unit preset with alpha = kappa = mu = 1, where ||m^n||^2 <= (1+2k)^-n ||m^0||^2 holds."""
        c = self.coefficients
        return self.preset == "unit" and c.alpha == c.kappa == c.mu == 1.0

    @property
    def subdivisions(self) -> int | None:
        if self.domain != "square":
            return None
        return self.n if self.n is not None else 8 * 2**self.level

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "degree": self.degree,
            "level": self.level,
            "n": self.n,
            "k": self.k,
            "T": self.T,
            "coefficients": self.coefficients.as_dict(),
            "m0": self.m0.sources,
            "s0": self.s0.sources,
            "trace_every": self.trace_every,
            "snapshot_times": list(self.snapshot_times),
            "solver": {"tol": self.solver.tol, "maxiter": self.solver.maxiter, "warm_start": self.solver.warm_start},
            "preset": self.preset,
            "j_off_time": self.j_off_time,
        }


def num_steps(T: float, k: float) -> int:
    """floor(T / k), robust to the rounding of decimal step sizes."""
    return int(math.floor(T / k * (1 + 1e-12)))


_SIM1_COEFF = dict(
    gamma=2.3e6, alpha=1.0e5, gamma_prime=3.0e-3, alpha_prime=1.0e-6, kappa=1.0e-9, mu=1.0e4,
    D0="1.0e-2", tau_sf=1.0e-7, tau_J=5e-8, beta=0.1, beta_prime=1.0e-5,
)
_SIM3_COEFF = dict(
    gamma=2.0e6, alpha=2.0e5, gamma_prime=1.0e-3, alpha_prime=1.2e-6, kappa=1.0e-9, mu=-1.0e4,
    D0="2.0e-2", tau_sf=2.0e-7, tau_J=1.0e-7, beta=0.2, beta_prime=1.0e-5,
)
_SNAP = [0.0, 2.5e-7, 1.0e-6, 2.0e-6, 4.0e-6, 5.0e-6]

PRESETS: dict[str, dict] = {
    "sim1": {
        "domain": "disk", "level": 3, "k": 1.0e-7, "T": 5.0e-6,
        "coefficients": {**_SIM1_COEFF, "j": ["0", "2.0e8"]},
        "m0": ["-0.1*y", "0.1*x", "0.1*(1 - x^2 - y^2)"],
        "s0": ["0.1*y", "-0.1*x", "-0.1*(1 - x^2 - y^2)"],
        "snapshot_times": _SNAP,
    },
    "sim2": {
        "domain": "square", "level": 0, "k": 1.0e-9, "T": 5.0e-6,
        "coefficients": {**_SIM1_COEFF, "j": ["0", "1.0e7"]},
        "m0": ["-0.1*y", "0.1*x", "0.1*sin(2*pi*x)"],
        "s0": ["0.1*x", "-0.1*y", "0.1*x*y"],
        "snapshot_times": _SNAP,
    },
    "sim3": {
        "domain": "square", "level": 0, "k": 1.0e-9, "T": 5.0e-6,
        "coefficients": {**_SIM3_COEFF, "j": ["1.0e6", "0"]},
        "m0": ["0.2*sin(2*pi*y)", "0.2*sin(2*pi*x)", "0.05"],
        "s0": ["0.1*cos(2*pi*x)", "-0.1*cos(pi*x)", "0.1*x*y"],
        "snapshot_times": [0.0, 1.0e-7, 2.5e-7, 5.0e-7, 1.0e-6, 2.5e-6, 5.0e-6],
    },
    "unit": {
        "domain": "square", "level": 0, "k": 1.0e-3, "T": 0.1,
        "coefficients": {name: 1.0 for name in SCALARS} | {"beta": 0.1, "D0": "1", "j": ["0", "1"]},
        "m0": ["0.1*sin(pi*x)*sin(pi*y)", "0", "0.05"],
        "s0": ["0.05", "0.1*sin(pi*x)*sin(pi*y)", "0"],
    },
}
DESK_STEPS = 500
for _name in ("sim1", "sim2", "sim3"):
    _p = PRESETS[_name]
    _desk = dict(_p)
    _desk["T"] = min(_p["T"], DESK_STEPS * _p["k"])
    _desk["snapshot_times"] = [t for t in _p["snapshot_times"] if t <= _desk["T"]]
    PRESETS[f"{_name}_desk"] = _desk

_TOP_KEYS = {
    "preset", "domain", "degree", "level", "n", "k", "T", "coefficients", "m0", "s0",
    "trace_every", "snapshot_times", "solver", "j_off_time",
}
_COEFF_KEYS = set(SCALARS) | {"D0", "j"}
_SOLVER_KEYS = {"tol", "maxiter", "warm_start"}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _check_keys(obj, allowed: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}{key}: unknown key")


def config_from_dict(raw: dict) -> SimConfig:
    """Expand the preset, apply explicit overrides, validate."""
    _check_keys(raw, _TOP_KEYS, "")
    preset = raw.get("preset")
    data = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        data = PRESETS[preset]
    data = _merge(data, raw)
    if "domain" not in data:
        raise ConfigError("domain: required (no preset given)")
    coeff_raw = data.get("coefficients", {})
    _check_keys(coeff_raw, _COEFF_KEYS, "coefficients.")
    solver_raw = data.get("solver", {})
    _check_keys(solver_raw, _SOLVER_KEYS, "solver.")
    try:
        kw = {name: float(coeff_raw[name]) for name in SCALARS if name in coeff_raw}
        if "D0" in coeff_raw:
            kw["D0"] = Expr.parse(coeff_raw["D0"])
        if "j" in coeff_raw:
            j = list(coeff_raw["j"])
            if len(j) not in (2, 3):
                raise ConfigError("coefficients.j: expected 2 (or 3) components")
            kw["j"] = VectorExpr.parse(j[:2] + ["0"])
        coefficients = Coefficients(**kw)
    except ExprError as exc:
        raise ConfigError(f"coefficients: {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"coefficients: {exc}") from exc

    def vec(key):
        try:
            return VectorExpr.parse(data[key]) if key in data else VectorExpr.parse(["0", "0", "0"])
        except ExprError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"{key}: expected a list of 3 expressions") from exc

    try:
        return SimConfig(
            domain=data["domain"],
            degree=int(data.get("degree", 1)),
            level=int(data.get("level", 0)),
            n=None if data.get("n") is None else int(data["n"]),
            k=float(data.get("k", 1e-3)),
            T=float(data.get("T", 0.0)),
            coefficients=coefficients,
            m0=vec("m0"),
            s0=vec("s0"),
            trace_every=int(data.get("trace_every", 1)),
            snapshot_times=tuple(float(t) for t in data.get("snapshot_times", ())),
            solver=SolverOptions(
                tol=float(solver_raw.get("tol", 1e-10)),
                maxiter=None if solver_raw.get("maxiter") is None else int(solver_raw["maxiter"]),
                warm_start=bool(solver_raw.get("warm_start", False)),
            ),
            preset=preset,
            j_off_time=None if data.get("j_off_time") is None else float(data["j_off_time"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)
