"""Model parameters, time grids, solver settings and the experiment presets.

Everything here is a frozen dataclass; validation happens once, at
construction time through :func:`validate` or the config loaders.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

WEIGHT_RULES = ("hamiltonian", "published")

PROPORTION_TOL = 1e-12
GRID_TOL = 1e-12


class ValidationError(ValueError):
    """An invariant on the inputs does not hold.

    ``code`` names the violated invariant (``"proportions-sum"``,
    ``"nonpositive-nu"``, ...) so callers can branch on it.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class GroupParams:
    a: float
    nu: float
    m: float
    mu0_mean: float
    sigma: float = 1.0
    mu0_var: float = 0.0


@dataclass(frozen=True)
class ModelParams:
    groups: tuple[GroupParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def K(self) -> int:
        return len(self.groups)

    # Vectorised views, length K.
    @property
    def a(self) -> np.ndarray:
        return np.array([g.a for g in self.groups], dtype=float)

    @property
    def nu(self) -> np.ndarray:
        return np.array([g.nu for g in self.groups], dtype=float)

    @property
    def m(self) -> np.ndarray:
        return np.array([g.m for g in self.groups], dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([g.sigma for g in self.groups], dtype=float)

    @property
    def mu0_mean(self) -> np.ndarray:
        return np.array([g.mu0_mean for g in self.groups], dtype=float)

    @property
    def mu0_var(self) -> np.ndarray:
        return np.array([g.mu0_var for g in self.groups], dtype=float)

    @classmethod
    def from_arrays(cls, a, nu, m, mu0_mean, sigma=None, mu0_var=None) -> "ModelParams":
        K = len(a)
        sigma = [1.0] * K if sigma is None else sigma
        mu0_var = [0.0] * K if mu0_var is None else mu0_var
        lengths = {len(x) for x in (a, nu, m, mu0_mean, sigma, mu0_var)}
        if lengths != {K}:
            raise ValidationError("dimension-mismatch", f"per-group arrays have lengths {sorted(lengths)}")
        groups = [
            GroupParams(a=float(a[k]), nu=float(nu[k]), m=float(m[k]), mu0_mean=float(mu0_mean[k]),
                        sigma=float(sigma[k]), mu0_var=float(mu0_var[k]))
            for k in range(K)
        ]
        return cls(tuple(groups))

    def permuted(self, order: Sequence[int]) -> "ModelParams":
        return ModelParams(tuple(self.groups[i] for i in order))


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    dt: float
    n_steps: int = field(default=-1)

    def __post_init__(self):
        if not (math.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ValidationError("nonpositive-horizon", f"horizon_T={self.horizon_T}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("nonpositive-dt", f"dt={self.dt}")
        n = self.n_steps if self.n_steps >= 0 else int(round(self.horizon_T / self.dt))
        if n < 1 or abs(n * self.dt - self.horizon_T) > GRID_TOL:
            raise ValidationError(
                "grid-mismatch", f"n_steps*dt = {n}*{self.dt} does not equal horizon_T={self.horizon_T}"
            )
        object.__setattr__(self, "n_steps", n)

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.dt

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon_T, self.dt / factor)


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-8
    max_iters: int = 10000
    damping: float = 1.0
    weight_rule: str = "hamiltonian"

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValidationError("nonpositive-epsilon", f"epsilon={self.epsilon}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValidationError("invalid-max-iters", f"max_iters={self.max_iters}")
        if not (0 < self.damping <= 1):
            raise ValidationError("invalid-damping", f"damping={self.damping} not in (0, 1]")
        if self.weight_rule not in WEIGHT_RULES:
            raise ValidationError("unknown-weight-rule", f"{self.weight_rule!r} not in {WEIGHT_RULES}")


def validate(params: ModelParams) -> ModelParams:
    """Check every group and population invariant; return ``params`` unchanged.

    Raises :class:`ValidationError` naming the first violated invariant.
    """
    if params.K < 1:
        raise ValidationError("empty-groups", "at least one group is required")
    for k, g in enumerate(params.groups):
        for name in ("a", "sigma", "nu", "m", "mu0_mean", "mu0_var"):
            if not math.isfinite(getattr(g, name)):
                raise ValidationError(f"nonfinite-{name.replace('_', '-')}", f"group {k}: {name}={getattr(g, name)}")
        if g.nu <= 0:
            raise ValidationError("nonpositive-nu", f"group {k}: nu={g.nu}")
        # sigma = 0 is accepted: it gives the noiseless limit used by the cost and MC checks.
        if g.sigma < 0:
            raise ValidationError("negative-sigma", f"group {k}: sigma={g.sigma}")
        if g.m <= 0:
            raise ValidationError("nonpositive-m", f"group {k}: m={g.m}")
        if g.m > 1:
            raise ValidationError("m-above-one", f"group {k}: m={g.m}")
        if g.mu0_var < 0:
            raise ValidationError("negative-mu0-var", f"group {k}: mu0_var={g.mu0_var}")
    total = math.fsum(g.m for g in params.groups)
    if abs(total - 1.0) > PROPORTION_TOL:
        raise ValidationError("proportions-sum", f"proportions sum to {total!r}, expected 1")
    return params


# --- presets -----------------------------------------------------------------

_BASE = dict(a=(0.2, 0.2), nu=(0.5, 0.5), m=(0.5, 0.5), mu0_mean=(1.0, 1.0))

PRESETS: dict[str, dict[str, tuple[float, float]]] = {
    "base": dict(_BASE),
    "exp2": {**_BASE, "mu0_mean": (1.0, 2.0)},
    "exp3": {**_BASE, "nu": (1.0, 0.5)},
    "exp4": {**_BASE, "a": (0.5, 0.2)},
    "exp5": {**_BASE, "a": (0.5, 0.2), "m": (0.1, 0.9)},
}

PRESET_T = 1.0
PRESET_DT = 0.01


def preset(name: str) -> tuple[ModelParams, TimeGrid, SolverConfig]:
    """Parameters, grid and solver settings for one of the five experiments."""
    try:
        values = PRESETS[name]
    except KeyError:
        raise ValidationError("unknown-preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    params = validate(ModelParams.from_arrays(**values))
    return params, TimeGrid(PRESET_T, PRESET_DT), SolverConfig()


# --- config documents ---------------------------------------------------------

_GROUP_KEYS = {"a", "sigma", "nu", "m", "mu0_mean", "mu0_var"}
_GROUP_REQUIRED = {"a", "nu", "m", "mu0_mean"}
_TOP_KEYS = {"groups", "horizon_T", "dt", "epsilon", "max_iters", "damping", "weight_rule"}
_TOP_REQUIRED = {"groups", "horizon_T", "dt"}


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("not-a-number", f"{where} must be a number, got {value!r}")
    return float(value)


def config_from_dict(doc: dict) -> tuple[ModelParams, TimeGrid, SolverConfig]:
    if not isinstance(doc, dict):
        raise ValidationError("bad-config", "config document must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValidationError("unknown-key", f"unknown top-level keys: {sorted(unknown)}")
    missing = _TOP_REQUIRED - set(doc)
    if missing:
        raise ValidationError("missing-key", f"missing top-level keys: {sorted(missing)}")
    if not isinstance(doc["groups"], list):
        raise ValidationError("bad-config", "groups must be a list")
    groups = []
    for k, g in enumerate(doc["groups"]):
        if not isinstance(g, dict):
            raise ValidationError("bad-config", f"groups[{k}] must be an object")
        unknown = set(g) - _GROUP_KEYS
        if unknown:
            raise ValidationError("unknown-key", f"groups[{k}] has unknown keys: {sorted(unknown)}")
        missing = _GROUP_REQUIRED - set(g)
        if missing:
            raise ValidationError("missing-key", f"groups[{k}] is missing: {sorted(missing)}")
        groups.append(GroupParams(**{key: _number(v, f"groups[{k}].{key}") for key, v in g.items()}))
    params = validate(ModelParams(tuple(groups)))
    grid = TimeGrid(_number(doc["horizon_T"], "horizon_T"), _number(doc["dt"], "dt"))
    solver_kw: dict[str, Any] = {}
    for key in ("epsilon", "damping"):
        if key in doc:
            solver_kw[key] = _number(doc[key], key)
    if "max_iters" in doc:
        if isinstance(doc["max_iters"], bool) or not isinstance(doc["max_iters"], int):
            raise ValidationError("invalid-max-iters", f"max_iters must be an integer, got {doc['max_iters']!r}")
        solver_kw["max_iters"] = doc["max_iters"]
    if "weight_rule" in doc:
        solver_kw["weight_rule"] = doc["weight_rule"]
    return params, grid, SolverConfig(**solver_kw)


def config_to_dict(params: ModelParams, grid: TimeGrid, config: SolverConfig) -> dict:
    return {
        "groups": [asdict(g) for g in params.groups],
        "horizon_T": grid.horizon_T,
        "dt": grid.dt,
        "epsilon": config.epsilon,
        "max_iters": config.max_iters,
        "damping": config.damping,
        "weight_rule": config.weight_rule,
    }


def load_config(path: str | Path) -> tuple[ModelParams, TimeGrid, SolverConfig]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError("bad-config", f"{path}: {exc}") from None
    return config_from_dict(doc)

