from __future__ import annotations

import numpy as np
import pytest

from reflectctl.presets import affine_problem
from reflectctl.rsde import ControlPolicy, TimeGrid, simulate_paths


@pytest.fixture
def reflected_bm():
    """Reflected Brownian motion on [0, 1] over T=1."""
    return affine_problem("interval01", [[0.0]], 1.0, 1, sigma={"const": [[1.0]]})


def bundle_for(problem, x0, M, n_steps, seed=0, index=0, T=None):
    T = problem.horizon.T if T is None else T
    grid = TimeGrid(problem.horizon.t0, T, n_steps)
    policy = ControlPolicy.constant(problem.control_set, index)
    return simulate_paths(problem.domain, problem.coeffs, policy, grid, np.atleast_1d(x0), M, seed)
