"""Tests for path simulation and exit-time functionals"""
import numpy as np
import pytest

from exitctrl.domain import Domain
from exitctrl.exceptions import DomainMembershipError, SchemaError
from exitctrl.paths import (
    Policy,
    StopRule,
    barrier_value,
    coupled_distance,
    crossing_probability,
    detect_exit,
    exit_moment,
    exit_time_summary,
    simulate,
)
from exitctrl.schemas import SimConfig


@pytest.fixture(name="bundle")
def bundle_fixture(poisson, sim):
    """Two hundred Brownian paths from the centre"""
    return simulate(poisson, Policy.constant(poisson.controls), [0.0], sim)


def test_ragged_layout(bundle):
    """Test offsets, stored steps and exit bookkeeping"""
    assert bundle.n_paths == 200
    assert bundle.offsets[-1] == bundle.flat_states.shape[0]
    np.testing.assert_array_equal(np.diff(bundle.offsets), bundle.last_step + 1)
    assert np.all(bundle.last_step >= 1)
    np.testing.assert_allclose(bundle.state_at(0), np.zeros((200, 1)))


def test_exit_times_and_points(bundle):
    """Test that exits land on the boundary within the reported step"""
    exited = ~bundle.censored
    assert exited.all()
    np.testing.assert_allclose(np.abs(bundle.exit_point[exited, 0]), 1.0)
    steps = bundle.last_step[exited]
    tau = bundle.tau[exited]
    assert np.all(tau <= steps * bundle.dt + 1e-12)
    assert np.all(tau >= (steps - 1) * bundle.dt - 1e-12)
    # frozen continuation after the exit step
    late = bundle.state_at(bundle.n_steps)
    np.testing.assert_allclose(late, bundle.exit_point)
    assert not np.any(bundle.increments_at(bundle.max_step))


def test_independent_of_worker_count(poisson):
    """Test bit-identical bundles across worker counts and path counts"""
    config = SimConfig(dt=0.02, t_max=10.0, n_paths=1500, master_seed=99)
    policy = Policy.constant(poisson.controls)
    serial = simulate(poisson, policy, [0.25], config, workers=1)
    pooled = simulate(poisson, policy, [0.25], config, workers=4)
    np.testing.assert_array_equal(serial.flat_states, pooled.flat_states)
    np.testing.assert_array_equal(serial.tau, pooled.tau)

    fewer = simulate(poisson, policy, [0.25], config.model_copy(update={"n_paths": 10}))
    np.testing.assert_array_equal(fewer.tau, serial.tau[:10])


def test_mean_exit_time(poisson):
    """Test E tau = (1 - x^2) / 2 for unit-variance-rate Brownian exit"""
    bundle = simulate(poisson, Policy.constant(poisson.controls), [0.5],
                      SimConfig(dt=0.005, t_max=10.0, n_paths=2000, master_seed=3))
    summary = exit_time_summary(bundle)
    assert abs(summary.mean - 0.375) < 4 * summary.stderr + 0.02


def test_start_outside_rejected(poisson, sim):
    """Test that starting points outside the closed domain are rejected"""
    with pytest.raises(DomainMembershipError):
        simulate(poisson, Policy.constant(poisson.controls), [1.5], sim)


def test_start_on_boundary_exits_immediately(poisson, sim):
    """Test tau = 0 from a boundary point"""
    bundle = simulate(poisson, Policy.constant(poisson.controls), [1.0], sim)
    assert np.all(bundle.tau == 0.0)
    assert np.all(bundle.last_step == 0)
    assert not bundle.censored.any()


def test_censoring_at_short_horizon(poisson):
    """Test that paths still inside at t_max are censored"""
    bundle = simulate(poisson, Policy.constant(poisson.controls), [0.0],
                      SimConfig(dt=0.01, t_max=0.05, n_paths=100, master_seed=1))
    assert bundle.censored_fraction > 0.5
    assert np.all(bundle.tau[bundle.censored] == pytest.approx(0.05))
    assert np.all(bundle.exit_step[bundle.censored] == -1)


def test_exit_frame_columns(bundle, tmp_path):
    """Test the exits table and its CSV export"""
    frame = bundle.exit_frame()
    assert list(frame.columns) == ["path_id", "exit_step", "tau", "censored", "exit_point_0"]
    path = bundle.export(tmp_path / "exits.csv")
    assert path.read_text().count("\n") == bundle.n_paths + 1


def test_detect_exit_grid_crossing():
    """Test first-exit detection on a hand-made path"""
    dom = Domain.interval(0.0, 1.0)
    record = detect_exit(np.array([[0.0], [0.5], [1.2], [0.3]]), dom, "grid-crossing", 0.1)
    assert record.exit_step == 2
    assert record.tau == pytest.approx(0.2)
    np.testing.assert_allclose(record.exit_point, [1.0])

    censored = detect_exit(np.array([[0.0], [0.1]]), dom, "grid-crossing", 0.1)
    assert censored.censored and censored.exit_step is None


def test_crossing_probability():
    """Test the bridge crossing probability limits"""
    assert crossing_probability(np.array([0.0]), np.array([0.5]), np.array([1.0]), 0.01)[0] == 1.0
    far = crossing_probability(np.array([1.0]), np.array([1.0]), np.array([1.0]), 0.01)[0]
    assert far < 1e-80


def test_exit_moment_at_zero(bundle):
    """Test that mu = 0 gives exactly one"""
    assert exit_moment(bundle, 0.0).mean == 1.0
    assert exit_moment(bundle, 0.5).mean > 1.0


def test_policy_validation(poisson, controlled):
    """Test policy construction checks"""
    with pytest.raises(SchemaError):
        Policy.constant(controlled.controls, 2)
    with pytest.raises(SchemaError):
        Policy.open_loop(controlled.controls, [])
    table = Policy.table(controlled.controls, np.array([[-0.5], [0.5]]), np.array([0, 1]))
    np.testing.assert_array_equal(table.indices(0, np.array([[-0.9], [0.7]])), [0, 1])
    schedule = Policy.open_loop(controlled.controls, [1, 0])
    np.testing.assert_array_equal(schedule.indices(5, np.zeros((2, 1))), [0, 0])


def test_barrier_value():
    """Test the exterior-sphere barrier"""
    dom = Domain.interval(0.0, 1.0)
    w, y_star, y_tilde = barrier_value(dom, [0.0], 1.0)
    assert w == pytest.approx(np.exp(-1.0) - np.exp(-4.0))
    np.testing.assert_allclose(y_tilde, [2.0])
    assert barrier_value(dom, [1.0], 1.0)[0] == 0.0
    with pytest.raises(DomainMembershipError):
        barrier_value(dom, [2.0], 1.0)
    with pytest.raises(SchemaError):
        barrier_value(dom, [0.0], 0.0)


def test_stop_rules(bundle):
    """Test deterministic and sub-domain stopping"""
    np.testing.assert_array_equal(StopRule.at_time(0.0).steps(bundle), np.zeros(200))
    at = StopRule.at_time(0.1).steps(bundle)
    assert np.all(at <= 10) and np.all(at <= bundle.last_step)

    inner = Domain.interval(0.0, 0.5)
    stop = StopRule.subdomain_exit(inner).steps(bundle)
    assert np.all(stop <= bundle.last_step)
    early = stop < bundle.last_step
    states = bundle.flat_states[bundle.offsets[:-1] + stop]
    assert not np.any(inner.contains(states[early]))
    with pytest.raises(SchemaError):
        StopRule.at_time(-1.0)


def test_coupled_distance_shrinks_under_mean_reversion():
    """Test the synchronous coupling distance decay"""
    from exitctrl.catalog import build_catalog_problem

    problem = build_catalog_problem("ou1d", {"R": 2.0})
    config = SimConfig(dt=0.01, t_max=5.0, n_paths=200, master_seed=4)
    policy = Policy.constant(problem.controls)
    start = coupled_distance(problem, policy, [0.0], [0.4], config, 0.0)
    later = coupled_distance(problem, policy, [0.0], [0.4], config, 0.5)
    assert start.mean == pytest.approx(0.16)
    assert later.mean < start.mean


def test_bridge_correction_exits_no_later(poisson):
    """Test that bridge-corrected exit times never exceed grid-crossing ones on shared seeds"""
    config = SimConfig(dt=0.02, t_max=10.0, n_paths=300, master_seed=21)
    policy = Policy.constant(poisson.controls)
    grid = simulate(poisson, policy, [0.3], config.model_copy(update={"exit_correction": "grid-crossing"}))
    bridge = simulate(poisson, policy, [0.3], config)
    assert np.all(bridge.tau <= grid.tau + 1e-12)
    assert np.all(bridge.last_step <= grid.last_step)
    assert bridge.tau.mean() < grid.tau.mean()


def test_smaller_domain_exits_no_later(poisson):
    """Test per-path exit monotonicity under a shrunk interval with shared increments"""
    config = SimConfig(dt=0.01, t_max=10.0, n_paths=300, master_seed=8, exit_correction="grid-crossing")
    policy = Policy.constant(poisson.controls)
    wide = simulate(poisson, policy, [0.1], config)
    narrow = simulate(poisson.with_domain(Domain.interval(0.0, 0.7)), policy, [0.1], config)
    assert np.all(narrow.tau <= wide.tau)

    bridged = config.model_copy(update={"exit_correction": "bridge-corrected"})
    wide = simulate(poisson, policy, [0.1], bridged)
    narrow = simulate(poisson.with_domain(Domain.interval(0.0, 0.7)), policy, [0.1], bridged)
    assert np.all(narrow.last_step <= wide.last_step)


def test_coupled_distance_constant_for_additive_noise(poisson):
    """Test that x-independent coefficients keep the coupled gap at |x - x'|^2"""
    config = SimConfig(dt=0.01, t_max=5.0, n_paths=200, master_seed=4)
    policy = Policy.constant(poisson.controls)
    for stop_time in (0.0, 0.05, 0.3):
        gap = coupled_distance(poisson, policy, [-0.2], [0.2], config, stop_time)
        assert gap.mean == pytest.approx(0.16, abs=1e-12)
        assert gap.stderr == pytest.approx(0.0, abs=1e-12)


def test_crossing_probability_straddle():
    """Test exp(-2 d1 d2 / (sigma^2 dt)) at d1 = d2 = 0.1 and sigma^2 dt = 0.02"""
    p = crossing_probability(np.array([0.1]), np.array([0.1]), np.array([2.0]), 0.01)[0]
    assert p == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_results_ignore_thread_setting(poisson, monkeypatch):
    """Test bit-identical bundles across EXITCTRL_THREADS values"""
    config = SimConfig(dt=0.02, t_max=10.0, n_paths=1200, master_seed=17)
    policy = Policy.constant(poisson.controls)
    monkeypatch.setenv("EXITCTRL_THREADS", "1")
    serial = simulate(poisson, policy, [-0.4], config)
    monkeypatch.setenv("EXITCTRL_THREADS", "3")
    pooled = simulate(poisson, policy, [-0.4], config)
    np.testing.assert_array_equal(serial.flat_states, pooled.flat_states)
    np.testing.assert_array_equal(serial.tau, pooled.tau)
    np.testing.assert_array_equal(serial.exit_point, pooled.exit_point)
