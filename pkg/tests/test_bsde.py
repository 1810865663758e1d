"""Tests for the backward regression solver"""
import math

import numpy as np
import pytest

from exitctrl.bsde import (
    Driver,
    TestFunction,
    backward_semigroup,
    candidate_policies,
    cost,
    estimate_value,
    solve_bsde,
)
from exitctrl.catalog import exact_solution
from exitctrl.exceptions import SchemaError
from exitctrl.expr import ZERO, const, x
from exitctrl.paths import Policy, StopRule, simulate
from exitctrl.schemas import SimConfig


@pytest.fixture(name="bundle")
def bundle_fixture(poisson, sim):
    return simulate(poisson, Policy.constant(poisson.controls), [0.0], sim)


def test_constant_driver_counts_steps(poisson, bundle):
    """Test that a unit running cost integrates to the mean number of steps"""
    solution = solve_bsde(poisson, bundle)
    expected = bundle.last_step.mean() * bundle.dt
    assert solution.y0 == pytest.approx(expected, rel=1e-9)
    np.testing.assert_allclose(solution.pathwise, bundle.last_step * bundle.dt)
    assert solution.stderr == pytest.approx(np.std(bundle.last_step * bundle.dt, ddof=1) / math.sqrt(200))


def test_poisson_cost_matches_closed_form(poisson):
    """Test J(0) against u(0) = 1/2"""
    estimate = cost(poisson, Policy.constant(poisson.controls), [0.0],
                    SimConfig(dt=0.005, t_max=10.0, n_paths=2000, master_seed=21))
    assert abs(estimate.value - 0.5) < 4 * estimate.stderr + 0.02
    assert estimate.n_paths == 2000


def test_semilinear_cost_matches_closed_form(semilinear):
    """Test the monotone driver -2y + 1 against its closed form"""
    exact = exact_solution("semilinear1d")(np.array([[0.0]]))[0]
    estimate = cost(semilinear, Policy.constant(semilinear.controls), [0.0],
                    SimConfig(dt=0.005, t_max=10.0, n_paths=2000, master_seed=22))
    assert abs(estimate.value - exact) < 4 * estimate.stderr + 0.03


def test_terminal_values(poisson, bundle):
    """Test terminal expression and per-path eta overrides"""
    lifted = solve_bsde(poisson, bundle, terminal=const(0.3))
    base = solve_bsde(poisson, bundle)
    assert lifted.y0 - base.y0 == pytest.approx(0.3)
    eta = np.linspace(0.0, 1.0, bundle.n_paths)
    zero_horizon = solve_bsde(poisson, bundle, stop_rule=StopRule.at_time(0.0), eta=eta)
    assert zero_horizon.y0 == pytest.approx(eta.mean())


def test_rows_after_stop_hold_terminal(poisson, bundle):
    """Test the frozen convention on Y and Z"""
    stop = StopRule.at_time(0.1)
    solution = solve_bsde(poisson, bundle, stop_rule=stop)
    np.testing.assert_allclose(solution.y_at(50), solution.terminal)
    assert not np.any(solution.z_at(50))
    frame = solution.solution_frame()
    assert list(frame.columns) == ["path_id", "step", "y", "z_0"]
    assert frame["step"].max() <= 10


def test_shifted_driver_is_ordered(poisson, bundle):
    """Test that a constant driver shift adds shift * E[steps * dt]"""
    base = solve_bsde(poisson, bundle)
    shifted = solve_bsde(poisson, bundle, driver=Driver.from_problem(poisson).shifted(0.25))
    assert shifted.y0 - base.y0 == pytest.approx(0.25 * bundle.last_step.mean() * bundle.dt)


def test_backward_semigroup_of_value(poisson, bundle):
    """Test G[u(X)] for the exact value function over a short horizon"""
    u = exact_solution("poisson1d")
    stop = StopRule.at_time(0.2)
    steps = stop.steps(bundle)
    eta = u(bundle.flat_states[bundle.offsets[:-1] + steps])
    semigroup = backward_semigroup(poisson, bundle, stop, eta)
    assert abs(semigroup.value - 0.5) < 4 * semigroup.stderr + 0.02


def test_driver_kinds(poisson):
    """Test the test-function, frozen and lower-bound drivers"""
    phi = TestFunction.from_expr(x(0) ** 4, 1)
    xs = np.array([[0.5], [0.0]])
    zero = np.zeros(2)
    F = Driver.test_function(phi).evaluate(poisson, xs, zero, np.zeros((2, 1)))
    np.testing.assert_allclose(F, [12 * 0.25 + 1, 1.0])
    frozen = Driver.frozen(phi, [0.5]).evaluate(poisson, xs, zero, np.zeros((2, 1)))
    np.testing.assert_allclose(frozen, [4.0, 4.0])
    lower = Driver.lower_bound(1.0, 2.0).evaluate(poisson, xs, np.array([0.5, -1.0]), np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(lower, [1.0 - 1.0 - 2.0, 1.0 - 2.0])
    with pytest.raises(SchemaError):
        Driver("stochastic")
    with pytest.raises(SchemaError):
        Driver.lower_bound(1.0, -1.0)


def test_test_function_derivatives():
    """Test gradient and Hessian evaluation of a 2-d test function"""
    phi = TestFunction.from_expr(x(0) ** 2 * x(1), 2)
    point = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(phi.value(point), [2.0])
    np.testing.assert_allclose(phi.gradient(point), [[4.0, 1.0]])
    np.testing.assert_allclose(phi.hessian(point), [[[4.0, 2.0], [2.0, 0.0]]])


def test_estimate_value_picks_minimum(controlled):
    """Test that the value is the smallest candidate cost"""
    sim = SimConfig(dt=0.01, t_max=10.0, n_paths=300, master_seed=5)
    estimate = estimate_value(controlled, [0.5], sim=sim)
    values = [c.value for c in estimate.table]
    assert len(values) == 2
    assert estimate.value == min(values)
    # pushing towards the nearer boundary is cheaper
    assert estimate.best_index == 1
    doc = estimate.to_doc()
    assert doc["best_policy"] == "constant[1]"


def test_estimate_value_needs_candidates(poisson):
    """Test that an empty candidate list is rejected"""
    with pytest.raises(SchemaError):
        estimate_value(poisson, [0.0], policies=[])


def test_candidate_policies(poisson):
    """Test the default candidate list"""
    assert [p.label for p in candidate_policies(poisson)] == ["constant[0]"]


def test_zero_driver_averages_terminal(poisson, bundle):
    """Test that y0 is the sample mean of a state-dependent terminal when the driver vanishes"""
    rule = StopRule.at_time(0.2)
    terminal = x(0) ** 2 + x(0)
    solution = solve_bsde(poisson, bundle, terminal=terminal, driver=Driver.expression(ZERO), stop_rule=rule)
    stopped = bundle.flat_states[bundle.offsets[:-1] + rule.steps(bundle)]
    eta = stopped[:, 0] ** 2 + stopped[:, 0]
    assert np.std(eta) > 0
    assert solution.y0 == pytest.approx(eta.mean(), rel=1e-9, abs=1e-12)
