from __future__ import annotations

import numpy as np
import pytest

from reflectctl.domain import Region, classify, eval_phi
from reflectctl.errors import ContractError, NumericalError, PreconditionError
from reflectctl.presets import affine_problem
from reflectctl.rsde import (
    BLOCK_SIZE,
    Coefficients,
    ControlPolicy,
    FeedbackTable,
    TimeGrid,
    brownian_increments,
    iter_bundles,
    k_moment,
    simulate_paths,
    sup_excursion_moment,
)

from conftest import bundle_for


def _still():
    return affine_problem("interval01", [[0.0]], 1.0, 1)


def _pin():
    return affine_problem("interval01", [[0.0]], 0.5, 1, b={"const": [1.0]})


def test_time_grid():
    g = TimeGrid(0.0, 1.0, 4)
    assert g.dt == 0.25
    np.testing.assert_allclose(g.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert TimeGrid.with_default_step(0.0, 2.0).n_steps == 1000
    with pytest.raises(ContractError):
        TimeGrid(1.0, 1.0, 3)


def test_no_motion():
    b = bundle_for(_still(), 0.3, 5, 50)
    assert np.all(b.X == 0.3) and np.all(b.K == 0)
    assert k_moment(b, 2) == 0.0
    assert sup_excursion_moment(b, 4) == 0.0


def test_skorokhod_pin():
    b = bundle_for(_pin(), 0.9, 1, 500)
    assert abs(b.K[0, -1] - 0.4) <= 2 * b.grid.dt
    assert b.X[0, -1, 0] == pytest.approx(1.0, abs=1e-12)
    assert k_moment(b, 2) == pytest.approx(0.16, rel=0.02)


def test_straight_line_excursion():
    p = affine_problem("interval01", [[0.0]], 0.05, 1, b={"const": [1.0]})
    b = bundle_for(p, 0.9, 1, 50)
    for q in (2, 4, 8):
        assert sup_excursion_moment(b, q) == pytest.approx(0.05 ** q, rel=1e-9)
    with pytest.raises(PreconditionError):
        sup_excursion_moment(b, 3)


def test_reflected_bm_symmetry(reflected_bm):
    b = bundle_for(reflected_bm, 0.5, 100_000, 100)
    xt = b.X[:, -1, 0]
    assert abs(xt.mean() - 0.5) <= 3 * xt.std(ddof=1) / np.sqrt(len(xt))


def test_bundle_invariants(reflected_bm):
    b = bundle_for(reflected_bm, 0.2, 2000, 200, seed=5)
    dom = b.domain
    assert np.all(classify(dom, b.X.reshape(-1, 1)) != Region.EXTERIOR)
    assert np.all(b.dK >= 0)
    hit = b.dK > dom.boundary_tol
    assert np.all(np.abs(eval_phi(dom, b.X[:, 1:][hit])) <= dom.boundary_tol)
    assert np.all(np.diff(b.K, axis=1) >= 0)
    # increments have variance dt within sampling noise
    var = b.dB[:, :, 0].var(axis=0)
    se = b.grid.dt * np.sqrt(2.0 / b.M)
    assert np.all(np.abs(var - b.grid.dt) <= 5 * se)


def test_determinism_and_chunking(reflected_bm):
    grid = TimeGrid(0.0, 1.0, 30)
    pol = ControlPolicy.constant(reflected_bm.control_set)
    whole = simulate_paths(reflected_bm.domain, reflected_bm.coeffs, pol, grid, [0.4], 3 * BLOCK_SIZE, 11)
    again = simulate_paths(reflected_bm.domain, reflected_bm.coeffs, pol, grid, [0.4], 3 * BLOCK_SIZE, 11)
    assert np.array_equal(whole.X, again.X) and np.array_equal(whole.dK, again.dK)
    parts = list(iter_bundles(reflected_bm.domain, reflected_bm.coeffs, pol, grid, [0.4], 3 * BLOCK_SIZE, 11,
                              chunk=BLOCK_SIZE))
    assert len(parts) == 3
    assert np.array_equal(np.concatenate([p.X for p in parts]), whole.X)


def test_brownian_offset_consistency():
    a = brownian_increments(2, 2 * BLOCK_SIZE, 4, 1, 0.1)
    b = brownian_increments(2, BLOCK_SIZE, 4, 1, 0.1, path_offset=BLOCK_SIZE)
    assert np.array_equal(a[BLOCK_SIZE:], b)
    with pytest.raises(ContractError):
        brownian_increments(2, 10, 4, 1, 0.1, path_offset=3)


def test_exterior_start_rejected(reflected_bm):
    with pytest.raises(PreconditionError):
        bundle_for(reflected_bm, 1.5, 10, 10)


def test_nonfinite_coefficients_named():
    coeffs = Coefficients(b=lambda t, x, u: np.full_like(x, np.nan), sigma=lambda t, x, u: np.zeros((1, 1)))
    p = affine_problem("interval01", [[0.0]], 1.0, 1)
    with pytest.raises(NumericalError, match="t=0"):
        simulate_paths(p.domain, coeffs, ControlPolicy.constant(p.control_set), TimeGrid(0, 1, 5), [0.5], 3, 0)


def test_piecewise_and_feedback_policies():
    p = affine_problem("interval01", [[-1.0], [1.0]], 1.0, 2, b={"u": [[1.0]]})
    grid = TimeGrid(0.0, 1.0, 100)
    pw = ControlPolicy(p.control_set, "piecewise_constant", macro_indices=(1, 0))
    b = simulate_paths(p.domain, p.coeffs, pw, grid, [0.3], 1, 0)
    # up for 0.5 then down for 0.5: 0.3 -> 0.8 -> 0.3
    assert b.X[0, 50, 0] == pytest.approx(0.8)
    assert b.X[0, -1, 0] == pytest.approx(0.3)
    table = FeedbackTable(np.array([[0, 1]]), 2, (np.array([0.0]), np.array([1.0])))  # left half goes down, right half goes up
    fb = ControlPolicy(p.control_set, "feedback", feedback=table)
    b = simulate_paths(p.domain, p.coeffs, fb, grid, [0.45], 1, 0)
    assert b.X[0, -1, 0] == pytest.approx(0.0)
    with pytest.raises(ContractError):
        ControlPolicy(p.control_set, "constant", index=5)


def test_k_scaling_upper_bound():
    # E[K_alpha^2] <= C alpha with one constant, for starts near and away from the boundary
    p = affine_problem("interval01", [[0.0]], 0.64, 1, sigma={"const": [[1.0]]})
    vals = []
    for x0 in (0.5, 0.99):
        b = bundle_for(p, x0, 20_000, 640, seed=3)
        vals += [k_moment(b, 2, 0, w) / (w * b.grid.dt) for w in (40, 160, 640)]
    assert max(vals) <= 2.0


def test_sup_excursion_scaling(reflected_bm):
    est = []
    for T in (0.01, 0.04):
        b = bundle_for(reflected_bm, 0.5, 20_000, 100, seed=4, T=T)
        est.append(sup_excursion_moment(b, 2))
    assert 2 <= est[1] / est[0] <= 8


def test_k_moment_window_validation(reflected_bm):
    b = bundle_for(reflected_bm, 0.5, 10, 10)
    with pytest.raises(PreconditionError):
        k_moment(b, 2, 5, 3)
