"""Tests for domains and control sets"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitctrl.domain import ControlSet, Domain
from exitctrl.exceptions import SchemaError


def test_interval_signed_distance():
    """Test signed distance inside, on and outside an interval"""
    dom = Domain.interval(0.0, 1.0)
    np.testing.assert_allclose(dom.signed_distance(np.array([[0.0], [0.75], [1.0], [1.5]])),
                               [1.0, 0.25, 0.0, -0.5])
    assert list(dom.contains(np.array([[1.0], [1.5]]))) == [True, False]


def test_ball_projection_and_normal():
    """Test closest boundary point and outward normal on a disc"""
    dom = Domain.ball((0.0, 0.0), 2.0)
    point = dom.closest_boundary_point(np.array([[0.3, 0.4]]))
    np.testing.assert_allclose(point, [[1.2, 1.6]])
    np.testing.assert_allclose(dom.outward_normal(point), [[0.6, 0.8]])
    assert dom.rho == 2.0


def test_box_corner_normal():
    """Test that a box corner gets the normalised sum of face normals"""
    dom = Domain.box((0.0, 0.0), (1.0, 2.0))
    normal = dom.outward_normal(np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(normal, [[1 / math.sqrt(2), 1 / math.sqrt(2)]])
    # exterior radius defaults to the smallest half-width
    assert dom.exterior_radius == 1.0


def test_box_signed_distance_outside():
    """Test Euclidean distance outside a box corner"""
    dom = Domain.box((0.0, 0.0), (1.0, 1.0))
    assert dom.signed_distance(np.array([[4.0, 5.0]]))[0] == pytest.approx(-5.0)


@pytest.mark.parametrize("dom", [
    Domain.interval(0.5, 2.0),
    Domain.ball((0.0, 0.0), 1.0),
    Domain.ball((0.0, 0.0, 1.0), 1.5),
    Domain.box((0.0, 1.0), (0.5, 2.0)),
])
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_samples_lie_in_closure(dom, seed):
    """Test interior and boundary sampling"""
    rng = np.random.default_rng(seed)
    assert np.all(dom.contains(dom.sample_interior(rng, 50), tol=1e-12))
    boundary = dom.sample_boundary(rng, 20)
    assert np.all(dom.on_boundary(boundary, tol=1e-9))


def test_map_uniform_is_rowwise():
    """Test that prefixes of the uniform array give nested point sets"""
    dom = Domain.ball((0.0, 0.0), 1.0)
    u = np.random.default_rng(3).random((40, dom.uniform_width))
    np.testing.assert_array_equal(dom.map_uniform(u)[:10], dom.map_uniform(u[:10]))


def test_invalid_domains():
    """Test validation of radius and kind"""
    with pytest.raises(SchemaError):
        Domain.interval(0.0, -1.0)
    with pytest.raises(SchemaError):
        Domain("simplex", (0.0,), (1.0,))


def test_control_set_ordering():
    """Test lexicographic ordering and lookup"""
    controls = ControlSet.from_values([1.0, -1.0, 0.0])
    assert controls.points == ((-1.0,), (0.0,), (1.0,))
    assert controls.index_of(1.0) == 2
    assert controls.index_of(0.5) is None
    assert controls.array.shape == (3, 1)


def test_control_set_rejects_duplicates():
    """Test that repeated control points are rejected"""
    with pytest.raises(SchemaError):
        ControlSet.from_values([0.0, 0.0])
    with pytest.raises(SchemaError):
        ControlSet(())
