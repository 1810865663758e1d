"""Tests for the finite-difference HJB solver"""
from dataclasses import replace

import numpy as np
import pytest

from exitctrl.catalog import build_catalog_problem, exact_solution
from exitctrl.domain import ControlSet, Domain
from exitctrl.exceptions import ConfigError, DomainMembershipError, NonMonotoneStencilError
from exitctrl.expr import ONE, ZERO, const, x
from exitctrl.hjb import build_grid, extract_policy, hjb_residual, nodal_hamiltonians, solve_hjb
from exitctrl.problem import ControlProblem
from exitctrl.schemas import GridConfig


def test_poisson_reproduced_on_grid(poisson):
    """Test that central differences reproduce the quadratic solution"""
    field = solve_hjb(poisson, GridConfig(nodes=[41]))
    exact = exact_solution("poisson1d")(field.nodes)
    np.testing.assert_allclose(field.u.ravel(), exact, atol=1e-7)
    assert field.boundary.ravel()[[0, -1]].all()
    assert field.sup_residual <= 1e-9
    assert field.interpolate(np.array([[0.0]]))[0] == pytest.approx(0.5, abs=1e-7)


def test_semilinear_second_order(semilinear):
    """Test the error of the semilinear benchmark on a fine grid"""
    field = solve_hjb(semilinear, GridConfig(nodes=[101]))
    exact = exact_solution("semilinear1d")(field.nodes)
    assert np.max(np.abs(field.u.ravel() - exact)) < 1e-3


def test_controlled_policy_pushes_outwards(controlled):
    """Test the upwind solution and extracted feedback of the controlled drift"""
    field = solve_hjb(controlled, GridConfig(nodes=[201]))
    exact = exact_solution("controlled1d")(field.nodes)
    assert np.max(np.abs(field.u.ravel() - exact)) < 0.02
    policy = extract_policy(field, controlled)
    # index 0 is v = -1, index 1 is v = +1
    np.testing.assert_array_equal(policy.indices(0, np.array([[-0.5], [0.5]])), [0, 1])


def test_controlled_central_differences(controlled):
    """Test the second-order stencil against the closed form"""
    field = solve_hjb(controlled, GridConfig(nodes=[201], upwind=False))
    exact = exact_solution("controlled1d")(field.nodes)
    assert np.max(np.abs(field.u.ravel() - exact)) < 1e-3


def test_residual_at_interior_node(semilinear):
    """Test the discrete Hamiltonian at a node"""
    field = solve_hjb(semilinear, GridConfig(nodes=[21]))
    node = field.nodes[10]
    assert abs(hjb_residual(field, semilinear, node)) < 1e-8
    assert nodal_hamiltonians(field, semilinear, node).shape == (1,)


def test_residual_requires_interior_node(semilinear):
    """Test that off-grid and boundary points are rejected"""
    field = solve_hjb(semilinear, GridConfig(nodes=[21]))
    with pytest.raises(DomainMembershipError):
        hjb_residual(field, semilinear, [0.01])
    with pytest.raises(DomainMembershipError):
        hjb_residual(field, semilinear, [1.0])


def test_central_differences_must_be_monotone():
    """Test that a strong drift on a coarse central stencil is rejected"""
    problem = build_catalog_problem("controlled1d", {"v_max": 50.0})
    with pytest.raises(NonMonotoneStencilError):
        solve_hjb(problem, GridConfig(nodes=[5], upwind=False))


def test_disc_solution():
    """Test the planar Poisson problem on a disc"""
    problem = build_catalog_problem("poisson_ball2d")
    field = solve_hjb(problem, GridConfig(nodes=[81]))
    exact = exact_solution("poisson_ball2d")(np.array([[0.0, 0.0]]))[0]
    assert field.interpolate(np.array([[0.0, 0.0]]))[0] == pytest.approx(exact, abs=0.02)


def test_three_dimensions_rejected():
    """Test that tensor grids are limited to two dimensions"""
    problem = ControlProblem(
        b=(ZERO, ZERO, ZERO),
        sigma=((ONE, ZERO, ZERO), (ZERO, ONE, ZERO), (ZERO, ZERO, ONE)),
        f=const(1.0),
        g=ZERO,
        domain=Domain.ball((0.0, 0.0, 0.0), 1.0),
        controls=ControlSet(((0.0,),)),
        m=3,
    )
    with pytest.raises(ConfigError):
        build_grid(problem, GridConfig())


def test_field_outputs(poisson):
    """Test the nodal table and summary"""
    field = solve_hjb(poisson, GridConfig(nodes=[11]))
    frame = field.frame()
    assert list(frame.columns) == ["x_0", "u", "policy", "boundary"]
    assert len(frame) == 11
    summary = field.summary()
    assert summary["nodes"] == [11]
    assert summary["sweeps"] == 1


def test_boundary_nodes_follow_interior_policy(controlled):
    """Test that feedback next to the boundary keeps the outward push"""
    field = solve_hjb(controlled, GridConfig(nodes=[41]))
    policy = extract_policy(field, controlled)
    np.testing.assert_array_equal(policy.indices(0, np.array([[0.999], [-0.999], [1.0]])), [1, 0, 1])
    nodal = field.policy.ravel()
    assert nodal[0] == nodal[1]
    assert nodal[-1] == nodal[-2]


def test_raising_g_never_lowers_u(controlled):
    """Test the discrete comparison property of the monotone scheme"""
    base = solve_hjb(controlled, GridConfig(nodes=[41]))
    raised = solve_hjb(controlled.with_terminal(const(0.2) + x(0) ** 2), GridConfig(nodes=[41]))
    assert np.all(raised.u >= base.u - 1e-12)
    assert raised.u.ravel()[20] > base.u.ravel()[20]


def test_policy_sweeps_reduce_residual(controlled):
    """Test that the residual never grows across policy sweeps"""
    field = solve_hjb(controlled, GridConfig(nodes=[81]))
    residuals = [entry["residual"] for entry in field.log]
    assert len(residuals) >= 2
    assert all(later <= earlier + 1e-12 for earlier, later in zip(residuals, residuals[1:]))


def test_policy_invariant_under_scaled_hamiltonian():
    """Test that multiplying drift, covariance and cost by 4 keeps the nodal policy"""
    base = build_catalog_problem("controlled1d")
    scaled = build_catalog_problem("controlled1d", {"sigma_scale": 2.0 * np.sqrt(2.0), "v_max": 4.0, "source": 4.0})
    first = solve_hjb(base, GridConfig(nodes=[41]))
    second = solve_hjb(scaled, GridConfig(nodes=[41]))
    np.testing.assert_allclose(second.u, first.u, atol=1e-10)
    np.testing.assert_array_equal(second.policy, first.policy)
    probes = np.array([[-0.73], [-0.2], [0.31], [0.98]])
    np.testing.assert_array_equal(extract_policy(second, scaled).indices(0, probes),
                                  extract_policy(first, base).indices(0, probes))


def test_residual_drops_under_nodal_bump(poisson):
    """Test that raising u at one node lowers its residual by eps times the centre weight"""
    field = solve_hjb(poisson, GridConfig(nodes=[21]))
    node = field.nodes[10]
    before = hjb_residual(field, poisson, node)
    eps = 1e-3
    u = field.u.copy()
    u[10] += eps
    after = hjb_residual(replace(field, u=u), poisson, node)
    # centre weight a / h^2 with a = 2 and h = 0.1
    assert after - before == pytest.approx(-200.0 * eps, rel=1e-9)
