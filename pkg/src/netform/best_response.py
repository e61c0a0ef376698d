"""Best-response connection strengths of a representative agent.

For group k the Hamiltonian is

    H = a_k (Z - X) Y + (Z - X)^2 + nu_k * sum_l w(l)^2 m_l,
    Z = sum_l w(l) Xbar_l m_l,

which is strictly convex in ``w`` for ``nu_k > 0``. Setting the gradient to
zero gives a K x K linear system (:func:`implicit_best_response`); for two
groups it has the closed form of :func:`closed_form_k2`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams

ROW_TOL = 1e-14


class SingularSystemError(ArithmeticError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class AgentSnapshot:
    """State, adjoint and the population means seen by one agent at one instant.

    In the expected system ``own_state`` and ``own_adjoint`` are the group
    means Xbar_k and Ybar_k.
    """

    own_state: float
    own_adjoint: float
    population_means: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.population_means, dtype=float)
        if means.ndim != 1:
            raise ValueError("population_means must be one-dimensional")
        if not (np.isfinite(means).all() and np.isfinite(self.own_state) and np.isfinite(self.own_adjoint)):
            raise ValueError("snapshot contains nonfinite values")
        object.__setattr__(self, "population_means", means)


def _check(k: int, snap: AgentSnapshot, params: ModelParams):
    if not 0 <= k < params.K:
        raise IndexError(f"group index {k} out of range for K={params.K}")
    if snap.population_means.shape != (params.K,):
        raise ValueError(f"population_means has length {snap.population_means.size}, expected K={params.K}")


def hamiltonian(k: int, w, snap: AgentSnapshot, params: ModelParams) -> float:
    _check(k, snap, params)
    w = np.asarray(w, dtype=float)
    if w.shape != (params.K,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({params.K},)")
    g = params.groups[k]
    m = params.m
    gap = float(np.dot(w, snap.population_means * m)) - snap.own_state
    return g.a * gap * snap.own_adjoint + gap**2 + g.nu * float(np.dot(w**2, m))


def best_response_system(x: float, y: float, xbar: np.ndarray, a: float, nu: float, m: np.ndarray):
    """Matrix and right-hand side of the first-order conditions.

    Row l is the stationarity relation for w(l) written with every unknown
    on the left:

        (2 nu m_l + 2 c_l^2) w(l) + 2 c_l sum_{j != l} c_j w(j) = c_l (2 x - a y),

    with c_l = Xbar_l m_l.
    """
    c = xbar * m
    A = 2.0 * nu * np.diag(m) + 2.0 * np.outer(c, c)
    b = c * (2.0 * x - a * y)
    return A, b


def solve_best_response(x: float, y: float, xbar: np.ndarray, a: float, nu: float, m: np.ndarray) -> np.ndarray:
    """Array-level kernel behind :func:`implicit_best_response`."""
    A, b = best_response_system(x, y, xbar, a, nu, m)
    diag = np.diag(A)
    if diag.min() < ROW_TOL:
        raise SingularSystemError("best-response row denominator vanishes", np.inf)
    if A.shape[0] == 1:
        return b / diag
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise SingularSystemError("best-response system is numerically rank deficient", cond)
    return np.linalg.solve(A, b)


def implicit_best_response(k: int, snap: AgentSnapshot, params: ModelParams) -> np.ndarray:
    """Minimiser of the group-k Hamiltonian for general K (dense direct solve)."""
    _check(k, snap, params)
    g = params.groups[k]
    return solve_best_response(snap.own_state, snap.own_adjoint, snap.population_means, g.a, g.nu, params.m)


def closed_form_k2(k: int, l: int, snap: AgentSnapshot, params: ModelParams) -> float:
    """Two-group closed form of the Hamiltonian minimiser, component ``l``.

    Solving the 2 x 2 system gives

        w(l) = (2 X - a Y) Xbar_l / (2 (nu + Xbar_l^2 m_l + Xbar_{-l}^2 m_{-l})).

    The published two-group formula is exactly twice this value; see
    :func:`published_weight`.
    """
    if params.K != 2:
        raise ValueError(f"closed_form_k2 requires K=2, got K={params.K}")
    _check(k, snap, params)
    if l not in (0, 1):
        raise IndexError(f"group index {l} out of range for K=2")
    g = params.groups[k]
    xb = snap.population_means
    m = params.m
    other = 1 - l
    denom = g.nu + xb[l] ** 2 * m[l] + xb[other] ** 2 * m[other]
    return (2.0 * snap.own_state - g.a * snap.own_adjoint) * xb[l] / (2.0 * denom)


def published_weight(x: float, y: float, xbar: np.ndarray, a: float, nu: float, m: np.ndarray) -> np.ndarray:
    """Two-group weights from the published closed form (twice the minimiser).

    Kept so the published figures can be regenerated; these weights do not
    minimise the Hamiltonian and so do not form a Nash equilibrium.
    """
    if xbar.shape != (2,):
        raise ValueError("the published closed form is defined for K=2 only")
    q = nu + xbar[0] ** 2 * m[0] + xbar[1] ** 2 * m[1]
    return (2.0 * x - a * y) * xbar / q
