"""Euler-Maruyama sample paths of the state SDEs at a computed equilibrium."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fbode import EquilibriumSolution
from .model import ModelParams, TimeGrid

RNG_NAME = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class PathSet:
    paths: np.ndarray  # (M, K, n_nodes)
    seed: int
    rng: str = RNG_NAME

    @property
    def M(self) -> int:
        return self.paths.shape[0]


@dataclass(frozen=True)
class CostEstimate:
    group: int
    mean: float
    std_error: float | None  # None when M == 1


def simulate_paths(solution: EquilibriumSolution, params: ModelParams, grid: TimeGrid,
                   M: int, seed: int) -> PathSet:
    """Simulate ``M`` independent paths per group.

    The aggregates are frozen at the equilibrium Zbar, so each group's state
    is an Ornstein-Uhlenbeck-type process driven towards a known path.
    """
    if M < 1:
        raise ValueError(f"path count must be >= 1, got {M}")
    K, n, dt = params.K, grid.n_steps, grid.dt
    zbar = solution.trajectories.zbar
    if zbar.shape != (K, n + 1):
        raise ValueError("solution grid does not match the requested grid")
    a, sigma = params.a, params.sigma
    rng = np.random.Generator(np.random.PCG64(seed))
    x0_noise = rng.standard_normal((M, K))
    increments = rng.standard_normal((n, M, K)) * (sigma * np.sqrt(dt))

    paths = np.empty((M, K, n + 1))
    paths[:, :, 0] = params.mu0_mean + np.sqrt(params.mu0_var) * x0_noise
    for i in range(n):
        x = paths[:, :, i]
        paths[:, :, i + 1] = x + a * (zbar[:, i] - x) * dt + increments[i]
    if not np.isfinite(paths).all():
        raise ArithmeticError("nonfinite value in simulated paths")
    return PathSet(paths, seed)


def empirical_cost(pathset: PathSet, solution: EquilibriumSolution, params: ModelParams,
                   grid: TimeGrid) -> list[CostEstimate]:
    """Monte Carlo estimate of each group's expected cost, with its standard error."""
    K = params.K
    if pathset.paths.shape[1:] != (K, grid.n_nodes):
        raise ValueError(f"path set has shape {pathset.paths.shape}, expected (M, {K}, {grid.n_nodes})")
    zbar = solution.trajectories.zbar
    w = solution.weights.w
    m = params.m
    control = params.nu[:, None] * np.einsum("kli,l->ki", w**2, m)  # (K, n_nodes)
    integrand = (zbar[None] - pathset.paths) ** 2 + control[None]
    dt = grid.dt
    per_path = dt * (integrand.sum(axis=2) - 0.5 * (integrand[:, :, 0] + integrand[:, :, -1]))  # (M, K)
    out = []
    for k in range(K):
        samples = per_path[:, k]
        se = float(samples.std(ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else None
        out.append(CostEstimate(k, float(samples.mean()), se))
    return out
