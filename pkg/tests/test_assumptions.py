"""Tests for the assumption audit and constant derivation"""
import numpy as np
import pytest

from exitctrl.assumptions import (
    ASSUMPTION_ORDER,
    barrier_margin,
    derive_constants,
    draw_probe_sample,
    estimate_delta,
    lipschitz_of_test_driver,
    search_barrier_exponent,
    validate_assumptions,
    witness_reproduces,
)
from exitctrl.bsde import Driver, TestFunction
from exitctrl.catalog import build_catalog_problem
from exitctrl.exceptions import ConfigError
from exitctrl.expr import x
from exitctrl.schemas import ProbeConfig


@pytest.fixture(name="probe")
def probe_fixture():
    return ProbeConfig(seed=5, sample_count=400, barrier_samples=100)


def test_poisson_passes_audit(poisson, probe):
    """Test that the Brownian benchmark satisfies its declared constants"""
    report = validate_assumptions(poisson, probe)
    assert [doc["name"] for doc in report.to_doc()] == list(ASSUMPTION_ORDER)
    assert report.passed("H1", "H3", "H4", "H6")
    # mu is not declared, so H5 cannot be decided
    assert report.entries["H5"].status == "not-checkable"


def test_overstated_monotonicity_fails_with_witness(semilinear, probe):
    """Test that a declared alpha above the true one produces a reproducible witness"""
    problem = semilinear.with_constants(alpha=5.0)
    report = validate_assumptions(problem, probe)
    entry = report.entries["H3(iii)"]
    assert entry.status == "fail"
    assert entry.estimate == pytest.approx(2.0)
    assert witness_reproduces(problem, entry, probe)


def test_probe_samples_are_nested(semilinear, probe):
    """Test that a smaller probe sample is a prefix of a larger one"""
    small = draw_probe_sample(semilinear, probe, 50)
    large = draw_probe_sample(semilinear, probe, 200)
    for key in small:
        np.testing.assert_array_equal(small[key], large[key][:50])
    assert np.all(semilinear.domain.contains(large["x1"]))


def test_estimate_delta():
    """Test the coupling quotient for Brownian and mean-reverting drifts"""
    probe = ProbeConfig(seed=1, sample_count=200)
    assert estimate_delta(build_catalog_problem("poisson1d"), probe) == pytest.approx(0.0, abs=1e-12)
    assert estimate_delta(build_catalog_problem("ou1d"), probe) == pytest.approx(-1.0)


def test_lipschitz_of_test_driver(poisson, probe):
    """Test the Lipschitz estimate of F = L phi + f for phi = x^4"""
    driver = Driver.test_function(TestFunction.from_expr(x(0) ** 4, 1))
    value = lipschitz_of_test_driver(lambda xs, ys, zs, vs: driver.evaluate(poisson, xs, ys, zs, vs),
                                     poisson, probe)
    # F = 12 x^2 + 1 on [-1, 1]
    assert 0 < value <= 24.0 + 1e-9


def test_barrier_search(poisson, probe):
    """Test that the barrier margin turns positive for the Brownian benchmark"""
    k, mu0 = search_barrier_exponent(poisson, 0.0, probe)
    assert k == 1.0
    assert mu0 > 0
    assert barrier_margin(poisson, k, 0.0, probe) == pytest.approx(mu0)


def test_derive_constants_feasible(semilinear, probe):
    """Test theta at the midpoint of (gamma, min(mu, -2 delta+))"""
    constants = derive_constants(semilinear.with_constants(mu=1.0), probe)
    assert constants.gamma == pytest.approx(-4.0)
    assert constants.theta_feasible is True
    assert constants.theta == pytest.approx(-2.0)
    assert constants.k is not None and constants.mu0 > 0
    # F = 12 x^2 - 2 (y + x^4) + 1 on [-1, 1]
    assert 0 < constants.L0 <= 16.0 + 1e-9


def test_derive_constants_keeps_declared_L0(semilinear, probe):
    """Test that a declared L0 is not resampled"""
    constants = derive_constants(semilinear.with_constants(mu=1.0, L0=3.0), probe)
    assert constants.L0 == 3.0


def test_derive_constants_infeasible(poisson, probe):
    """Test that an empty theta interval is flagged instead of filled in"""
    constants = derive_constants(poisson.with_constants(mu=1.0), probe)
    assert constants.theta_feasible is False
    assert constants.theta is None
    assert constants.theta_interval[0] >= constants.theta_interval[1]


def test_derive_constants_requires_audit(semilinear, probe):
    """Test that failed H3 stops constant derivation"""
    with pytest.raises(ConfigError):
        derive_constants(semilinear.with_constants(alpha=5.0, mu=1.0), probe)
