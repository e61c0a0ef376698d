"""Cost functional evaluation and unilateral-deviation checks.

With weights that depend on time only, the aggregate Z_k is deterministic
and the state is Gaussian, so

    E[(Z - X)^2] = (Zbar - Xbar)^2 + Var(X)

and the expected cost reduces to ODE quantities. The variance term does not
depend on the weights at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .fbode import EquilibriumSolution
from .model import ModelParams, TimeGrid


@dataclass(frozen=True)
class CostBreakdown:
    tracking_mean: float
    tracking_variance: float
    control_cost: float
    state_mean: np.ndarray  # the deviating agent's own mean path

    @property
    def total(self) -> float:
        return self.tracking_mean + self.tracking_variance + self.control_cost


@dataclass(frozen=True)
class DeviationReport:
    group: int
    baseline_cost: float
    best_deviation_cost: float
    best_deviation: str
    deviations_tested: int

    @property
    def nash_gap(self) -> float:
        """Cost reduction achieved by the best tested deviation (<= 0: none found)."""
        return self.baseline_cost - self.best_deviation_cost

    def passes(self, rel_tol: float = 1e-4) -> bool:
        return self.nash_gap <= rel_tol * (1.0 + abs(self.baseline_cost))

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "baseline_cost": self.baseline_cost,
            "best_deviation_cost": self.best_deviation_cost,
            "best_deviation": self.best_deviation,
            "nash_gap": self.nash_gap,
            "deviations_tested": self.deviations_tested,
        }


@dataclass(frozen=True)
class PerturbationFamily:
    """Bump perturbations on each (target group, time window) plus constant shifts."""

    amplitudes: tuple[float, ...] = (0.01, 0.05, 0.1)
    n_windows: int = 10
    constant_shifts: bool = True

    def directions(self, K: int, grid: TimeGrid) -> Iterator[tuple[str, np.ndarray]]:
        windows = np.array_split(np.arange(grid.n_nodes), self.n_windows)
        for amp in self.amplitudes:
            for sign in (1.0, -1.0):
                for l in range(K):
                    for s, idx in enumerate(windows):
                        delta = np.zeros((K, grid.n_nodes))
                        delta[l, idx] = sign * amp
                        yield f"bump l={l} window={s} amp={sign * amp:+g}", delta
                    if self.constant_shifts:
                        delta = np.zeros((K, grid.n_nodes))
                        delta[l] = sign * amp
                        yield f"shift l={l} amp={sign * amp:+g}", delta


def _trapz(values: np.ndarray, dt: float) -> float:
    return float(dt * (values.sum() - 0.5 * (values[0] + values[-1])))


def variance_trajectory(k: int, params: ModelParams, grid: TimeGrid) -> np.ndarray:
    """Var(X_k) on the grid, stepped with the exact solution of dV/dt = -2aV + sigma^2."""
    g = params.groups[k]
    decay = np.exp(-2.0 * g.a * grid.dt)
    if g.a == 0.0:
        gain = g.sigma**2 * grid.dt
    else:
        gain = g.sigma**2 * (-np.expm1(-2.0 * g.a * grid.dt)) / (2.0 * g.a)
    v = np.empty(grid.n_nodes)
    v[0] = g.mu0_var
    for i in range(grid.n_steps):
        v[i + 1] = v[i] * decay + gain
    return v


def evaluate_cost(k: int, own_weights, population_means, params: ModelParams, grid: TimeGrid) -> CostBreakdown:
    """Expected cost of group k's agent playing ``own_weights`` against fixed population means.

    The agent's own mean is re-integrated with the same explicit Euler step
    as the forward pass; integrals use the trapezoidal rule.
    """
    K, n, dt = params.K, grid.n_steps, grid.dt
    w = np.asarray(own_weights, dtype=float)
    pop = np.asarray(population_means, dtype=float)
    if w.shape != (K, n + 1) or pop.shape != (K, n + 1):
        raise ValueError(f"expected arrays of shape ({K}, {n + 1}); got {w.shape} and {pop.shape}")
    g = params.groups[k]
    m = params.m
    z = np.einsum("li,li->i", w, pop * m[:, None])
    x = np.empty(n + 1)
    x[0] = g.mu0_mean
    for i in range(n):
        x[i + 1] = x[i] + g.a * (z[i] - x[i]) * dt
    if not (np.isfinite(x).all() and np.isfinite(z).all()):
        raise ArithmeticError("nonfinite value while evaluating cost")
    control = g.nu * (w**2 * m[:, None]).sum(axis=0)
    return CostBreakdown(
        tracking_mean=_trapz((z - x) ** 2, dt),
        tracking_variance=_trapz(variance_trajectory(k, params, grid), dt),
        control_cost=_trapz(control, dt),
        state_mean=x,
    )


def deviation_check(solution: EquilibriumSolution, k: int, params: ModelParams, grid: TimeGrid,
                    family: PerturbationFamily | None = None) -> DeviationReport:
    """Try every deviation in ``family`` for group k with the population held fixed."""
    family = family or PerturbationFamily()
    own = solution.weights.w[k]
    pop = solution.trajectories.xbar
    baseline = evaluate_cost(k, own, pop, params, grid).total
    best_cost, best_label, tested = np.inf, "", 0
    for label, delta in family.directions(params.K, grid):
        cost = evaluate_cost(k, own + delta, pop, params, grid).total
        tested += 1
        if cost < best_cost:
            best_cost, best_label = cost, label
    return DeviationReport(k, baseline, float(best_cost), best_label, tested)
