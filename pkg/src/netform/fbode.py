"""Forward-backward ODE system for the expected equilibrium and its fixed-point solver.

Expected dynamics, per group k:

    dXbar_k = a_k (Zbar_k - Xbar_k) dt,                  Xbar_k(0) = mu0_k
    dYbar_k = (a_k Ybar_k + 2 (Zbar_k - Xbar_k)) dt,     Ybar_k(T) = 0
    Zbar_k  = sum_l w_k(l) Xbar_l m_l

with w_k the best response evaluated at (Xbar_k, Ybar_k, Xbar). Both passes
use explicit Euler on the uniform grid and recompute the weights at every
node from the current iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .best_response import published_weight, solve_best_response
from .model import ModelParams, SolverConfig, TimeGrid

log = logging.getLogger(__name__)


class SolverDivergence(ArithmeticError):
    """A nonfinite value appeared while integrating."""

    def __init__(self, message: str, node: int):
        super().__init__(f"{message} at node {node}")
        self.node = node


@dataclass
class MeanFieldTrajectories:
    xbar: np.ndarray  # (K, n_nodes)
    ybar: np.ndarray
    zbar: np.ndarray
    grid: TimeGrid


@dataclass
class WeightProfile:
    w: np.ndarray  # (K, K, n_nodes); w[k, l, i] is group k's weight on group l at t_i
    grid: TimeGrid


@dataclass
class EquilibriumSolution:
    trajectories: MeanFieldTrajectories
    weights: WeightProfile
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    weights_in_unit_interval: bool = True

    @property
    def grid(self) -> TimeGrid:
        return self.trajectories.grid


def node_weights(k: int, x: float, y: float, xbar: np.ndarray, params: ModelParams,
                 rule: str = "hamiltonian") -> np.ndarray:
    """Best response of group k at one node, under the chosen weight rule."""
    g = params.groups[k]
    if rule == "published":
        return published_weight(x, y, xbar, g.a, g.nu, params.m)
    return solve_best_response(x, y, xbar, g.a, g.nu, params.m)


def aggregates(xbar_node, weights_node, params: ModelParams) -> np.ndarray:
    """Zbar_k = sum_l w_k(l) Xbar_l m_l for every k at a single node."""
    xbar_node = np.asarray(xbar_node, dtype=float)
    weights_node = np.asarray(weights_node, dtype=float)
    K = params.K
    if xbar_node.shape != (K,) or weights_node.shape != (K, K):
        raise ValueError(f"expected xbar ({K},) and weights ({K}, {K}); got {xbar_node.shape}, {weights_node.shape}")
    return weights_node @ (xbar_node * params.m)


def _check_paths(arr, params: ModelParams, grid: TimeGrid, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (params.K, grid.n_nodes):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({params.K}, {grid.n_nodes})")
    return arr


def solve_forward(ybar, params: ModelParams, grid: TimeGrid, frozen_xbar=None,
                  rule: str = "hamiltonian") -> np.ndarray:
    """Integrate the state means forward for a given adjoint path.

    Without ``frozen_xbar`` all groups are integrated jointly. With it, each
    group k is integrated on its own while the other groups' means are read
    from ``frozen_xbar`` (the per-group update of the fixed-point sweep).
    """
    ybar = _check_paths(ybar, params, grid, "ybar")
    K, n, dt = params.K, grid.n_steps, grid.dt
    a, m = params.a, params.m
    xbar = np.empty((K, n + 1))
    xbar[:, 0] = params.mu0_mean

    if frozen_xbar is None:
        for i in range(n):
            x = xbar[:, i]
            w = np.array([node_weights(k, x[k], ybar[k, i], x, params, rule) for k in range(K)])
            z = w @ (x * m)
            xbar[:, i + 1] = x + a * (z - x) * dt
            if not np.isfinite(xbar[:, i + 1]).all():
                raise SolverDivergence("nonfinite state mean in forward pass", i + 1)
        return xbar

    frozen = _check_paths(frozen_xbar, params, grid, "frozen_xbar")
    for k in range(K):
        view = frozen.copy()
        view[k, 0] = params.mu0_mean[k]
        for i in range(n):
            col = view[:, i]
            w = node_weights(k, col[k], ybar[k, i], col, params, rule)
            z = float(np.dot(w, col * m))
            view[k, i + 1] = col[k] + a[k] * (z - col[k]) * dt
            if not np.isfinite(view[k, i + 1]):
                raise SolverDivergence(f"nonfinite state mean for group {k} in forward pass", i + 1)
        xbar[k] = view[k]
    return xbar


def solve_backward(xbar, params: ModelParams, grid: TimeGrid, rule: str = "hamiltonian") -> np.ndarray:
    """Integrate the adjoint means backward from Ybar(T) = 0 for a given state path.

    Group k's weights depend on its own adjoint only, so the groups decouple.
    """
    xbar = _check_paths(xbar, params, grid, "xbar")
    K, n, dt = params.K, grid.n_steps, grid.dt
    a, m = params.a, params.m
    ybar = np.zeros((K, n + 1))
    for k in range(K):
        for i in range(n, 0, -1):
            col = xbar[:, i]
            w = node_weights(k, col[k], ybar[k, i], col, params, rule)
            z = float(np.dot(w, col * m))
            ybar[k, i - 1] = ybar[k, i] - (a[k] * ybar[k, i] + 2.0 * (z - col[k])) * dt
            if not np.isfinite(ybar[k, i - 1]):
                raise SolverDivergence(f"nonfinite adjoint for group {k} in backward pass", i - 1)
    return ybar


def weight_profile(xbar, ybar, params: ModelParams, grid: TimeGrid, rule: str = "hamiltonian") -> WeightProfile:
    K = params.K
    w = np.empty((K, K, grid.n_nodes))
    for i in range(grid.n_nodes):
        for k in range(K):
            w[k, :, i] = node_weights(k, xbar[k, i], ybar[k, i], xbar[:, i], params, rule)
    return WeightProfile(w, grid)


def sweep(xbar, ybar, params: ModelParams, grid: TimeGrid, rule: str = "hamiltonian"):
    """One Jacobi sweep: every update reads only the previous iterate."""
    x_new = solve_forward(ybar, params, grid, frozen_xbar=xbar, rule=rule)
    y_new = solve_backward(xbar, params, grid, rule=rule)
    return x_new, y_new


def assemble(xbar, ybar, params: ModelParams, grid: TimeGrid, rule: str = "hamiltonian", *,
             iterations: int = 0, residual_history=(), converged: bool = False) -> EquilibriumSolution:
    """Weights and aggregates from given state/adjoint paths."""
    weights = weight_profile(xbar, ybar, params, grid, rule)
    zbar = np.einsum("kli,li->ki", weights.w, xbar * params.m[:, None])
    in_unit = bool(((weights.w >= 0.0) & (weights.w <= 1.0)).all())
    return EquilibriumSolution(
        trajectories=MeanFieldTrajectories(np.array(xbar), np.array(ybar), zbar, grid),
        weights=weights,
        iterations=iterations,
        residual_history=list(residual_history),
        converged=converged,
        weights_in_unit_interval=in_unit,
    )


def fixed_point_solve(params: ModelParams, grid: TimeGrid, config: SolverConfig | None = None) -> EquilibriumSolution:
    """Picard iteration on (Xbar, Ybar) until successive sweeps agree to ``epsilon``.

    Starts from Xbar = mu0 (constant in time) and Ybar = 0. Hitting
    ``max_iters`` is not an error: the iterate with the smallest residual is
    returned with ``converged=False``.
    """
    config = config or SolverConfig()
    rule = config.weight_rule
    if rule == "published" and params.K != 2:
        raise ValueError("the published weight rule is defined for K=2 only")
    K = params.K
    x = np.repeat(params.mu0_mean[:, None], grid.n_nodes, axis=1)
    y = np.zeros((K, grid.n_nodes))
    history: list[float] = []
    best = (np.inf, x, y)
    converged = False
    lam = config.damping

    for j in range(1, config.max_iters + 1):
        x_new, y_new = sweep(x, y, params, grid, rule)
        if lam != 1.0:
            x_new = lam * x_new + (1.0 - lam) * x
            y_new = lam * y_new + (1.0 - lam) * y
        residual = float(max(np.abs(x_new - x).max(), np.abs(y_new - y).max()))
        history.append(residual)
        x, y = x_new, y_new
        if residual < best[0]:
            best = (residual, x, y)
        log.debug("iteration %d residual %.3e", j, residual)
        if residual <= config.epsilon:
            converged = True
            break

    if not converged:
        log.warning("fixed point did not converge in %d iterations (best residual %.3e)", config.max_iters, best[0])
        x, y = best[1], best[2]
    return assemble(x, y, params, grid, rule, iterations=len(history), residual_history=history, converged=converged)
