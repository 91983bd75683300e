from __future__ import annotations

import numpy as np
import pytest

from reflectctl.acceptance import holder_quotient, with_controls
from reflectctl.domain import disk2, in_closure
from reflectctl.dpp import (
    MCConfig,
    SpaceMesh,
    ValueGrid,
    check_dpp_consistency,
    compute_value_dpp,
    dpp_consistency,
    evaluate_cost,
    interpolate,
    interpolation_error_estimate,
)
from reflectctl.errors import ContractError, PreconditionError
from reflectctl.presets import affine_problem, get_preset
from reflectctl.rsde import ControlPolicy, TimeGrid


def _transport(T=0.5, macro=5):
    return affine_problem("interval01", [[-1.0], [1.0]], T, macro, b={"u": [[1.0]]},
                          terminal={"kind": "linear", "coef": [0.0, 1.0]})


def test_evaluate_cost_constant_terminal():
    p = get_preset("zero-cost").problem
    est = evaluate_cost(p, ControlPolicy.constant(p.control_set), 0.0, [0.4], MCConfig(500, 10, 1))
    assert est.value == pytest.approx(0.5, abs=1e-10)


@pytest.mark.parametrize("x,expected", [(0.3, 0.8), (0.7, 1.0)])
def test_evaluate_cost_transport(x, expected):
    p = _transport(macro=1)
    up = ControlPolicy.constant(p.control_set, 1)
    mc = MCConfig(4, 500, 0)
    est = evaluate_cost(p, up, 0.0, [x], mc)
    assert abs(est.value - expected) <= 2 * 0.5 / 500


def test_evaluate_cost_rejects_exterior():
    p = _transport()
    with pytest.raises(PreconditionError):
        evaluate_cost(p, ControlPolicy.constant(p.control_set), 0.0, [1.3], MCConfig(4, 5, 0))


def test_mesh_invariants():
    mesh = SpaceMesh.uniform(disk2(), 10)
    assert np.all(in_closure(disk2(), mesh.nodes))
    assert mesh.h == pytest.approx(0.2)
    b = mesh.boundary_nodes
    np.testing.assert_allclose(np.linalg.norm(mesh.nodes[b], axis=1), 1.0)


def test_interpolation_reproduces_linear_functions():
    mesh = SpaceMesh.uniform(disk2(), 8)
    f = lambda x: 1.0 + 2.0 * x[:, 0] - 0.5 * x[:, 1]  # noqa: E731
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.45, 0.45, (200, 2))  # cells fully inside the disk
    vals, clipped = interpolate(mesh, f(mesh.nodes), pts)
    np.testing.assert_allclose(vals, f(pts), atol=1e-12)
    assert clipped == 0


def test_interpolation_clips_exterior():
    mesh = SpaceMesh.uniform(get_preset("zero-cost").problem.domain, 4)
    vals, clipped = interpolate(mesh, mesh.nodes[:, 0], np.array([[1.2], [0.5]]))
    np.testing.assert_allclose(vals, [1.0, 0.5])
    assert clipped == 1


def test_zero_cost_grid():
    p = get_preset("zero-cost").problem
    grid = compute_value_dpp(p, SpaceMesh.uniform(p.domain, 5), MCConfig(300, 10, 2))
    np.testing.assert_allclose(grid.W, 0.5, atol=1e-12)
    assert grid.provenance == "dpp"


def test_transport_closed_form():
    p = _transport()
    mesh = SpaceMesh.uniform(p.domain, 20)
    grid = compute_value_dpp(p, mesh, MCConfig(16, 20, 0))
    dt = p.horizon.dt / 20
    band = 2 * dt + interpolation_error_estimate(grid, 0)
    for k, t in enumerate(grid.times):
        exact = np.minimum(mesh.nodes[:, 0] + (p.horizon.T - t), 1.0)
        assert np.max(np.abs(grid.W[k] - exact)) <= band
    # the optimal drift pushes right everywhere below the kink
    assert np.all(grid.policy[:, mesh.nodes[:, 0] < 0.5] == 1)


def test_terminal_layer_exact():
    p = get_preset("controlled-drift").problem
    mesh = SpaceMesh.uniform(p.domain, 6)
    grid = compute_value_dpp(p, mesh, MCConfig(500, 5, 3))
    assert np.array_equal(grid.W[-1], p.cost.phi(mesh.nodes))


def test_singleton_control_equals_evaluate_cost():
    p = get_preset("heat-neumann").problem
    mesh = SpaceMesh.uniform(p.domain, 4)
    mc = MCConfig(4000, 20, 5)
    grid = compute_value_dpp(p, mesh, mc)
    j = 1
    est = evaluate_cost(p, ControlPolicy.constant(p.control_set), 0.0, mesh.nodes[j], MCConfig(4000, 20, 77))
    assert abs(grid.W[0, j] - est.value) <= 3 * np.hypot(grid.se[0, j], est.se)


def test_domination_and_enlargement():
    p = get_preset("controlled-drift").problem
    mesh = SpaceMesh.uniform(p.domain, 6)
    mc = MCConfig(3000, 10, 4)
    full = compute_value_dpp(p, mesh, mc)
    for c in range(len(p.control_set)):
        small = compute_value_dpp(with_controls(p, [p.control_set[c]]), mesh, mc)
        assert np.all(full.W[0] >= small.W[0] - 3 * np.hypot(full.se[0], small.se[0]))


def test_threads_do_not_change_result():
    p = get_preset("controlled-drift").problem
    mesh = SpaceMesh.uniform(p.domain, 6)
    mc = MCConfig(500, 5, 8)
    a = compute_value_dpp(p, mesh, mc, threads=1)
    b = compute_value_dpp(p, mesh, mc, threads=3)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.policy, b.policy)


def test_consistency_zero_cost():
    p = get_preset("zero-cost").problem
    assert check_dpp_consistency(p, SpaceMesh.uniform(p.domain, 5), MCConfig(200, 10, 1), None, 1) <= 1e-10


def test_consistency_transport():
    p = _transport(macro=1)
    mesh = SpaceMesh.uniform(p.domain, 20)
    res = dpp_consistency(p, mesh, MCConfig(8, 100, 0), None, 2)
    dt = p.horizon.dt / 100
    assert res.discrepancy <= 4 * dt + 2 * interpolation_error_estimate(res.grid_b, 0)


def test_consistency_rejects_mismatched_horizon():
    p = _transport(macro=1)
    with pytest.raises(PreconditionError):
        dpp_consistency(p, SpaceMesh.uniform(p.domain, 4), MCConfig(4, 4, 0), None, TimeGrid(0.0, 0.4, 2))


def test_holder_quotient_bounded():
    p = get_preset("controlled-drift").problem
    q = []
    for n in (6, 12):
        mesh = SpaceMesh.uniform(p.domain, n)
        q.append(holder_quotient(compute_value_dpp(p, mesh, MCConfig(2000, 10, 1)).W[0], mesh.h))
    assert q[1] <= 2 * q[0]


def test_time_continuity():
    p = affine_problem("interval01", [[0.0]], 1.0, 4, sigma={"const": [[1.0]]},
                       terminal={"kind": "cos_pi", "coef": 1.0})
    mesh = SpaceMesh.uniform(p.domain, 8)
    grid = compute_value_dpp(p, mesh, MCConfig(3000, 10, 2))
    jumps = np.max(np.abs(np.diff(grid.W, axis=0)), axis=1)
    assert np.all(jumps <= 2.0 * p.horizon.dt ** 0.25)


def test_problem_validation_names_offender():
    p = affine_problem("interval01", [[0.0]], 1.0, 1, b={"const": [50.0]})
    with pytest.raises(ContractError, match="linear growth"):
        p.validate()


def test_value_grid_shape():
    p = get_preset("zero-cost").problem
    grid = compute_value_dpp(p, SpaceMesh.uniform(p.domain, 3), MCConfig(10, 2, 0))
    assert isinstance(grid, ValueGrid)
    assert grid.W.shape == (3, 4) and grid.policy.shape == (2, 4)
