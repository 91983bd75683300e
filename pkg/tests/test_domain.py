from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectctl.domain import (
    ConvexDomain,
    Region,
    classify,
    disk2,
    eval_phi,
    get_domain,
    in_closure,
    interval01,
    inward_normal,
    project_to_closure,
)
from reflectctl.errors import ContractError, PreconditionError


def test_phi_values():
    assert eval_phi(interval01(), 0.5) == pytest.approx(0.25)
    assert eval_phi(disk2(), [0.0, 0.0]) == pytest.approx(0.5)


def test_inward_normal_examples():
    np.testing.assert_allclose(inward_normal(interval01(), 0.0), [1.0])
    np.testing.assert_allclose(inward_normal(interval01(), 1.0), [-1.0])
    np.testing.assert_allclose(inward_normal(disk2(), [0.0, 1.0]), [0.0, -1.0])


def test_inward_normal_off_boundary_raises():
    with pytest.raises(PreconditionError, match="phi"):
        inward_normal(interval01(), 0.5)


def test_projection_examples():
    p, d = project_to_closure(interval01(), 1.2)
    assert p == pytest.approx([1.0]) and d == pytest.approx(0.2)
    p, d = project_to_closure(interval01(), 0.5)
    assert p == pytest.approx([0.5]) and d == 0.0
    p, d = project_to_closure(disk2(), [3.0, 4.0])
    np.testing.assert_allclose(p, [0.6, 0.8])
    assert d == pytest.approx(4.0)


def test_classify_examples():
    assert classify(disk2(), [0.3, 0.4]) is Region.INTERIOR
    assert classify(disk2(), [1.0, 0.0]) is Region.BOUNDARY
    assert classify(interval01(), 1.5) is Region.EXTERIOR


def test_unknown_domain():
    with pytest.raises(ContractError):
        get_domain("square")


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        project_to_closure(disk2(), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("make", [interval01, disk2])
def test_projection_lands_in_closure(make):
    dom = make()
    rng = np.random.default_rng(0)
    lo, hi = dom.bounding_box
    x = lo - 1 + (hi - lo + 2) * rng.random((10_000, dom.dim))
    p, _ = project_to_closure(dom, x)
    assert np.all(classify(dom, p) != Region.EXTERIOR)
    # idempotence
    _, d2 = project_to_closure(dom, p)
    assert np.max(d2) <= dom.boundary_tol


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
@settings(max_examples=200, deadline=None)
def test_projection_contraction_disk(v):
    dom = disk2()
    x, y = np.array(v[:2]), np.array(v[2:])
    px, _ = project_to_closure(dom, x)
    py, _ = project_to_closure(dom, y)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


@given(st.floats(0, 2 * np.pi))
def test_normal_points_to_centroid(theta):
    dom = disk2()
    x = np.array([np.cos(theta), np.sin(theta)])
    assert inward_normal(dom, x) @ (dom.centroid - x) > 0


def _square_domain():
    # smooth convex superellipse |x|^4 + |y|^4 <= 1 without a closed-form projector
    return ConvexDomain(
        name="superellipse",
        dim=2,
        phi=lambda x: 0.25 * (1.0 - np.sum(x ** 4, axis=1)),
        grad_phi=lambda x: -(x ** 3),
        hess_phi=lambda x: np.stack([np.diag(-3 * r ** 2) for r in x]),
        bounding_box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        centroid=np.zeros(2),
    )


def test_iterative_projection_matches_brute_force():
    dom = _square_domain()
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (40, 2))
    p, dist = project_to_closure(dom, x)
    assert np.all(in_closure(dom, p))
    theta = np.linspace(0, 2 * np.pi, 20_001)
    c, s = np.cos(theta), np.sin(theta)
    ring = np.column_stack([np.sign(c) * np.abs(c) ** 0.5, np.sign(s) * np.abs(s) ** 0.5])
    for xi, pi, di in zip(x, p, dist):
        if in_closure(dom, xi):
            assert di == 0.0
            continue
        brute = np.min(np.linalg.norm(ring - xi, axis=1))
        assert di == pytest.approx(brute, abs=1e-4)
        assert abs(eval_phi(dom, pi)) <= 1e-8
