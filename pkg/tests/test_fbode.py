import numpy as np
import pytest

from netform.best_response import closed_form_k2, AgentSnapshot
from netform.fbode import (
    SolverDivergence,
    aggregates,
    fixed_point_solve,
    solve_backward,
    solve_forward,
    sweep,
)
from netform.model import ModelParams, SolverConfig, TimeGrid, preset

GRID = TimeGrid(1.0, 0.01)


def base_with(**kw):
    d = dict(a=[0.2, 0.2], nu=[0.5, 0.5], m=[0.5, 0.5], mu0_mean=[1.0, 1.0])
    d.update(kw)
    return ModelParams.from_arrays(**d)


# --- aggregates ------------------------------------------------------------------

def test_aggregates_zero_weights():
    np.testing.assert_array_equal(aggregates([1.0, 2.0], np.zeros((2, 2)), base_with()), [0.0, 0.0])


def test_aggregates_two_groups():
    w = np.full((2, 2), 4 / 3)
    assert aggregates([1.0, 1.0], w, base_with())[0] == pytest.approx(4 / 3, abs=1e-15)


def test_aggregates_identity_weighting():
    p = ModelParams.from_arrays(a=[0.2], nu=[0.5], m=[1.0], mu0_mean=[1.0])
    assert aggregates([3.5], [[1.0]], p)[0] == 3.5


def test_aggregates_dimension_mismatch():
    with pytest.raises(ValueError):
        aggregates([1.0], np.zeros((2, 2)), base_with())


# --- forward pass ----------------------------------------------------------------------

def test_forward_zero_drift_is_constant():
    p = base_with(a=[0.0, 0.0], mu0_mean=[1.0, 3.0])
    x = solve_forward(np.zeros((2, GRID.n_nodes)), p, GRID)
    np.testing.assert_array_equal(x, np.array([[1.0], [3.0]]) * np.ones(GRID.n_nodes))


def test_forward_zero_start_stays_zero():
    p = base_with(mu0_mean=[0.0, 0.0])
    np.testing.assert_array_equal(solve_forward(np.ones((2, GRID.n_nodes)), p, GRID), 0.0)


def test_forward_first_euler_step():
    # At t=0 the weights are 2/3 each, so Zbar = 2/3 and
    # Xbar(dt) = 1 + 0.2 * (2/3 - 1) * 0.01.
    x = solve_forward(np.zeros((2, GRID.n_nodes)), base_with(), GRID)
    expected = 1 + 0.2 * (2 / 3 - 1) * 0.01
    np.testing.assert_allclose(x[:, 1], [expected, expected], rtol=0, atol=1e-15)
    assert expected == pytest.approx(0.9993333333)


def test_forward_nonfinite_reports_node():
    p = ModelParams.from_arrays(a=[0.2], nu=[0.5], m=[1.0], mu0_mean=[1.0])
    with np.errstate(all="ignore"), pytest.raises(SolverDivergence) as err:
        solve_forward(np.full((1, GRID.n_nodes), 1e308), p, GRID)
    assert 0 < err.value.node <= GRID.n_steps


# --- backward pass ---------------------------------------------------------------------

def test_backward_zero_tracking_error_gives_zero_adjoint():
    # Xbar = 0 makes every weight and aggregate vanish, so Zbar = Xbar along the path.
    y = solve_backward(np.zeros((2, GRID.n_nodes)), base_with(), GRID)
    np.testing.assert_array_equal(y, 0.0)


def test_backward_terminal_condition():
    y = solve_backward(np.full((2, GRID.n_nodes), 1.7), base_with(), GRID)
    np.testing.assert_array_equal(y[:, -1], 0.0)


def test_backward_first_euler_step():
    # One group, nu = 0.5, Xbar = -1: w = 2/3, Zbar = -2/3, so Zbar - Xbar = 1/3 and
    # Ybar(T - dt) = 0 - 0.01 * (0.2 * 0 + 2/3).
    p = ModelParams.from_arrays(a=[0.2], nu=[0.5], m=[1.0], mu0_mean=[-1.0])
    y = solve_backward(np.full((1, GRID.n_nodes), -1.0), p, GRID)
    assert y[0, -2] == pytest.approx(-0.01 * 2 / 3, abs=1e-15)
    assert y[0, -2] == pytest.approx(-0.006667, abs=1e-6)


# --- fixed point ----------------------------------------------------------------------

def test_base_preset_is_symmetric(solved):
    _, _, sol = solved["base"]
    assert sol.converged
    x, w = sol.trajectories.xbar, sol.weights.w
    assert np.abs(x[0] - x[1]).max() <= 1e-10
    flat = w.reshape(4, -1)
    assert np.abs(flat - flat[0]).max() <= 1e-10


def test_zero_initial_state_is_a_fixed_point():
    sol = fixed_point_solve(base_with(mu0_mean=[0.0, 0.0]), GRID)
    assert sol.converged and sol.iterations <= 2
    for arr in (sol.trajectories.xbar, sol.trajectories.ybar, sol.trajectories.zbar, sol.weights.w):
        np.testing.assert_array_equal(arr, 0.0)


def test_zero_drift_converges_quickly():
    sol = fixed_point_solve(base_with(a=[0.0, 0.0]), GRID)
    assert sol.converged and sol.iterations <= 3
    np.testing.assert_array_equal(sol.trajectories.xbar, 1.0)


def test_boundary_conditions_hold_every_iteration():
    params, grid, _ = preset("exp4")
    x = np.repeat(params.mu0_mean[:, None], grid.n_nodes, axis=1)
    y = np.zeros_like(x)
    for _ in range(6):
        x, y = sweep(x, y, params, grid)
        np.testing.assert_array_equal(x[:, 0], params.mu0_mean)
        np.testing.assert_array_equal(y[:, -1], 0.0)


def test_solution_metadata(solved):
    for name, (params, grid, sol) in solved.items():
        assert sol.converged, name
        assert len(sol.residual_history) == sol.iterations
        assert sol.residual_history[-1] <= 1e-8
        assert sol.weights.w.shape == (2, 2, grid.n_nodes)
        assert np.isfinite(sol.weights.w).all()
        np.testing.assert_array_equal(sol.trajectories.xbar[:, 0], params.mu0_mean)
        np.testing.assert_array_equal(sol.trajectories.ybar[:, -1], 0.0)


def test_self_consistency(solved):
    for name, (params, grid, sol) in solved.items():
        x, y = sol.trajectories.xbar, sol.trajectories.ybar
        x2, y2 = sweep(x, y, params, grid)
        assert max(np.abs(x2 - x).max(), np.abs(y2 - y).max()) <= 1e-8, name


def test_weights_agree_with_closed_form(solved):
    params, grid, sol = solved["exp3"]
    tr = sol.trajectories
    for i in (0, 37, grid.n_steps):
        for k in range(2):
            snap = AgentSnapshot(tr.xbar[k, i], tr.ybar[k, i], tr.xbar[:, i])
            for l in range(2):
                assert sol.weights.w[k, l, i] == pytest.approx(closed_form_k2(k, l, snap, params), abs=1e-12)


def test_aggregates_match_weights(solved):
    params, grid, sol = solved["exp5"]
    tr = sol.trajectories
    for i in (0, 50, 100):
        np.testing.assert_allclose(tr.zbar[:, i], aggregates(tr.xbar[:, i], sol.weights.w[:, :, i], params),
                                   atol=1e-15)


def test_permutation_equivariance(solved):
    params, grid, sol = solved["exp5"]
    swapped = fixed_point_solve(params.permuted([1, 0]), grid)
    np.testing.assert_allclose(swapped.trajectories.xbar, sol.trajectories.xbar[::-1], atol=1e-12)
    np.testing.assert_allclose(swapped.trajectories.ybar, sol.trajectories.ybar[::-1], atol=1e-12)
    np.testing.assert_allclose(swapped.weights.w, sol.weights.w[::-1, ::-1], atol=1e-12)


def test_identical_groups_three_way_symmetry():
    p = ModelParams.from_arrays(a=[0.3] * 3, nu=[0.4] * 3, m=[0.2, 0.3, 0.5], mu0_mean=[1.5] * 3)
    sol = fixed_point_solve(p, GRID)
    x, w = sol.trajectories.xbar, sol.weights.w
    assert np.abs(x - x[0]).max() <= 1e-10
    assert np.abs(w - w[0, 0]).max() <= 1e-10


def test_damping_reaches_same_fixed_point(solved):
    params, grid, sol = solved["exp2"]
    damped = fixed_point_solve(params, grid, SolverConfig(damping=0.5))
    assert damped.converged and damped.iterations > sol.iterations
    np.testing.assert_allclose(damped.trajectories.xbar, sol.trajectories.xbar, atol=1e-7)
    np.testing.assert_allclose(damped.weights.w, sol.weights.w, atol=1e-7)


def test_non_convergence_is_reported():
    params, grid, _ = preset("exp4")
    sol = fixed_point_solve(params, grid, SolverConfig(max_iters=2))
    assert not sol.converged and sol.iterations == 2
    assert min(sol.residual_history) > 1e-8


def test_small_horizon_contracts():
    params, _, _ = preset("base")
    sol = fixed_point_solve(params, TimeGrid(0.1, 0.01), SolverConfig(epsilon=1e-12))
    d = np.array(sol.residual_history)
    assert sol.converged
    assert np.all(d[2:] <= 0.9 * d[1:-1])


@pytest.mark.slow
def test_grid_refinement_first_order():
    params, _, _ = preset("base")
    cfg = SolverConfig(epsilon=1e-13)
    xT = [fixed_point_solve(params, TimeGrid(1.0, dt), cfg).trajectories.xbar[:, -1] for dt in (0.01, 0.005)]
    # the step-halving difference should be O(dt): bounded by a modest multiple of dt
    assert np.all(np.abs(xT[0] - xT[1]) < 0.01)


def test_weights_flag_tracks_unit_interval(solved):
    assert solved["base"][2].weights_in_unit_interval
    assert not solved["exp2"][2].weights_in_unit_interval  # group 2 weight on itself exceeds 1


# --- published weight rule ------------------------------------------------------------

def test_published_rule_reproduces_figure_scale():
    params, grid, _ = preset("base")
    sol = fixed_point_solve(params, grid, SolverConfig(weight_rule="published"))
    assert sol.converged
    assert 1.2 < sol.weights.w[0, 0, 0] < 1.6
    assert not sol.weights_in_unit_interval


def test_published_rule_needs_two_groups():
    p = ModelParams.from_arrays(a=[0.2], nu=[0.5], m=[1.0], mu0_mean=[1.0])
    with pytest.raises(ValueError):
        fixed_point_solve(p, GRID, SolverConfig(weight_rule="published"))


def test_published_rule_exp4_states_rise():
    # With the published (doubled) weights Zbar exceeds Xbar, so the faster group rises more;
    # with the Hamiltonian minimiser both states decay instead.
    params, grid, _ = preset("exp4")
    pub = fixed_point_solve(params, grid, SolverConfig(weight_rule="published"))
    rise = pub.trajectories.xbar[:, -1] - pub.trajectories.xbar[:, 0]
    assert rise[0] > rise[1] > 0
    assert np.all(pub.weights.w[0] > pub.weights.w[1])
    exact = fixed_point_solve(params, grid)
    assert np.all(exact.trajectories.xbar[:, -1] < exact.trajectories.xbar[:, 0])
