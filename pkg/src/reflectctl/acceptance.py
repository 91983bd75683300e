"""Desk-scale acceptance checks.

Each check builds its own problem, runs the solvers at fixed sizes and
returns a :class:`CheckResult`; the wall-clock limit is part of the pass
condition.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dpp import MCConfig, ProblemSpec, SpaceMesh, compute_value_dpp, dpp_consistency, interpolation_error_estimate
from .gbsde import RecursiveCost, direct_expectation_oracle, solve_gbsde
from .hjb import FdGrid, compare_grids, solve_hjb_fd
from .presets import affine_problem, get_preset, yz_free_parts
from .rsde import ControlPolicy, TimeGrid, iter_bundles, simulate_paths


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    value: float  # headline statistic compared with ``bound``
    bound: float
    runtime: float
    limit: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.number:2d} {self.name}: value={self.value:.6g} bound={self.bound:.6g} "
                f"runtime={self.runtime:.1f}s/{self.limit:.0f}s")


def _finish(number, name, ok, value, bound, start, limit, **details) -> CheckResult:
    runtime = time.perf_counter() - start
    return CheckResult(number, name, bool(ok and runtime < limit), float(value), float(bound), runtime, limit, details)


def _reflected_bm(T: float, dim_name: str = "interval01", drift=None):
    d = 1 if dim_name == "interval01" else 2
    b = {"const": [0.0] * d} if drift is None else drift
    return affine_problem(dim_name, [[0.0]], T, 1, b=b, sigma={"const": np.eye(d).tolist()})


def _policy(problem: ProblemSpec, index: int = 0) -> ControlPolicy:
    return ControlPolicy.constant(problem.control_set, index)


# 1 ---------------------------------------------------------------------------------------------

def check_skorokhod_pin(seed: int = 0, threads: int = 1) -> CheckResult:
    start = time.perf_counter()
    p = affine_problem("interval01", [[0.0]], 0.5, 1, b={"const": [1.0]})
    grid = TimeGrid(0.0, 0.5, 500)
    bundle = simulate_paths(p.domain, p.coeffs, _policy(p), grid, [0.9], 1, seed)
    K_T = float(bundle.K[0, -1])
    x_err = abs(float(bundle.X[0, -1, 0]) - 1.0)
    dt = grid.dt
    ok = abs(K_T - 0.4) <= 2 * dt and x_err <= p.domain.boundary_tol
    return _finish(1, "skorokhod-pin", ok, abs(K_T - 0.4), 2 * dt, start, 1.0, K_T=K_T, x_T_error=x_err)


# 2 ---------------------------------------------------------------------------------------------

def check_k_scaling(seed: int = 0, threads: int = 1, M: int = 100_000) -> CheckResult:
    start = time.perf_counter()
    alphas = (0.04, 0.16, 0.64)
    dt = 1e-3
    p = _reflected_bm(max(alphas))
    grid = TimeGrid(0.0, max(alphas), int(round(max(alphas) / dt)))
    windows = [int(round(a / dt)) for a in alphas]
    cells = {}
    for x0 in (0.5, 0.99):
        sums = np.zeros(len(alphas))
        for b in iter_bundles(p.domain, p.coeffs, _policy(p), grid, [x0], M, seed):
            K = np.cumsum(b.dK, axis=1)
            sums += [np.sum(K[:, w - 1] ** 2) for w in windows]
        for a, s in zip(alphas, sums):
            cells[(x0, a)] = float(s / M / a)
    vals = np.array(list(cells.values()))
    ratio = vals.max() / vals.min()
    return _finish(2, "k-scaling", ratio <= 10.0, ratio, 10.0, start, 30.0,
                   normalized={f"x0={k[0]},alpha={k[1]}": v for k, v in cells.items()},
                   upper_constant=float(vals.max()))


# 3 ---------------------------------------------------------------------------------------------

def check_flow_stability(seed: int = 0, threads: int = 1, M: int = 20_000) -> CheckResult:
    start = time.perf_counter()
    p = _reflected_bm(0.5, "disk2", drift={"x": [[-0.5, 0.0], [0.0, -0.5]]})
    grid = TimeGrid(0.0, 0.5, 500)
    x0 = np.array([0.3, 0.4])
    out_dir = x0 / np.linalg.norm(x0)
    base = simulate_paths(p.domain, p.coeffs, _policy(p), grid, x0, M, seed).X
    normalized = {}
    for h in (0.05, 0.1):
        other = simulate_paths(p.domain, p.coeffs, _policy(p), grid, x0 + h * out_dir, M, seed).X
        sup = np.linalg.norm(base - other, axis=2).max(axis=1)
        normalized[h] = float(np.mean(sup ** 4) ** 0.25 / h)
    ratio = normalized[0.05] / normalized[0.1]
    return _finish(3, "flow-stability", 1 / 3 <= ratio <= 3, ratio, 3.0, start, 30.0,
                   normalized={str(k): v for k, v in normalized.items()})


# 4 ---------------------------------------------------------------------------------------------

def check_oracle_agreement(seed: int = 0, threads: int = 1, M: int = 100_000) -> CheckResult:
    start = time.perf_counter()
    worst, rows = 0.0, {}
    for name, x0 in (("heat-neumann", 0.25), ("boundary-cost", 0.1), ("drift-running-cost", 0.6)):
        p = get_preset(name).problem
        grid = TimeGrid(p.horizon.t0, p.horizon.T, 100)
        bundle = simulate_paths(p.domain, p.coeffs, _policy(p), grid, [x0], M, seed)
        sol = solve_gbsde(bundle, p.cost)
        f0, g0 = yz_free_parts(p)
        ora = direct_expectation_oracle(bundle, f0, g0, p.cost.phi(bundle.X[:, -1]))
        comb = float(np.hypot(sol.y0_se, ora.se))
        ratio = abs(sol.y0 - ora.value) / comb if comb > 0 else (0.0 if sol.y0 == ora.value else np.inf)
        rows[name] = {"gbsde": sol.y0, "oracle": ora.value, "combined_se": comb, "ratio": ratio}
        worst = max(worst, ratio)
        del bundle
    return _finish(4, "gbsde-oracle", worst <= 3.0, worst, 3.0, start, 60.0, presets=rows)


# 5 ---------------------------------------------------------------------------------------------

def random_ordered_pair(rng: np.random.Generator):
    """Two affine cost tables with ``Phi1 <= Phi2``, ``f1 <= f2``, ``g1 <= g2`` pointwise."""
    fy, gy = rng.uniform(-0.5, 0.5, 2)
    fz, fx = rng.uniform(-0.5, 0.5, 2)
    f_const, g_const = rng.uniform(-1, 1, 2)
    a, slope = rng.uniform(-1, 1, 2)
    df, dg, dphi, dslope = rng.uniform(0, 0.2, 4)
    first = dict(f={"const": f_const, "x": [fx], "y": fy, "z": [fz]}, g={"const": g_const, "y": gy},
                 terminal={"kind": "linear", "coef": [a, slope]})
    # Phi2 - Phi1 = dphi + dslope x >= 0 on [0, 1]
    second = dict(f={"const": f_const + df, "x": [fx], "y": fy, "z": [fz]}, g={"const": g_const + dg, "y": gy},
                  terminal={"kind": "linear", "coef": [a + dphi, slope + dslope]})
    return first, second


def check_comparison(seed: int = 0, threads: int = 1, M: int = 20_000, n_pairs: int = 5) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    common = dict(b={"const": [0.3]}, sigma={"const": [[0.8]]}, lipschitz_hint=2.0)
    base = affine_problem("interval01", [[0.0]], 0.5, 1, **common)
    grid = TimeGrid(0.0, 0.5, 50)
    bundle = simulate_paths(base.domain, base.coeffs, _policy(base), grid, [0.5], M, seed)
    worst, rows = -np.inf, []
    for _ in range(n_pairs):
        c1, c2 = random_ordered_pair(rng)
        s1 = solve_gbsde(bundle, affine_problem("interval01", [[0.0]], 0.5, 1, **common, **c1).cost)
        s2 = solve_gbsde(bundle, affine_problem("interval01", [[0.0]], 0.5, 1, **common, **c2).cost)
        comb = float(np.hypot(s1.y0_se, s2.y0_se))
        excess = (s1.y0 - s2.y0) / comb  # ordering holds when <= 3
        rows.append({"y0_1": s1.y0, "y0_2": s2.y0, "combined_se": comb})
        worst = max(worst, excess)
    return _finish(5, "comparison", worst <= 3.0, worst, 3.0, start, 60.0, pairs=rows)


# 6 ---------------------------------------------------------------------------------------------

def check_heat_neumann(seed: int = 0, threads: int = 1, M: int = 200_000, n_substeps: int = 200) -> CheckResult:
    start = time.perf_counter()
    p = get_preset("heat-neumann").problem
    exact = float(np.exp(-np.pi ** 2 / 2) * np.cos(np.pi / 4))
    fd = solve_hjb_fd(p, FdGrid.build(p, 1 / 200))
    j_fd = int(np.argmin(np.abs(fd.mesh.nodes[:, 0] - 0.25)))
    fd_rel = abs(fd.W[0, j_fd] - exact) / abs(exact)
    mesh = SpaceMesh.uniform(p.domain, 4)
    j = int(np.argmin(np.abs(mesh.nodes[:, 0] - 0.25)))
    dpp = compute_value_dpp(p, mesh, MCConfig(M, n_substeps, seed), threads=threads)
    dt = p.horizon.dt / n_substeps
    dpp_err = abs(dpp.W[0, j] - exact)
    dpp_band = 3 * dpp.se[0, j] + 2 * dt
    ok = fd_rel <= 0.01 and dpp_err <= dpp_band
    return _finish(6, "heat-neumann", ok, dpp_err / dpp_band, 1.0, start, 300.0,
                   exact=exact, fd=float(fd.W[0, j_fd]), fd_rel_error=float(fd_rel),
                   dpp=float(dpp.W[0, j]), dpp_se=float(dpp.se[0, j]), dpp_band=float(dpp_band))


# 7 ---------------------------------------------------------------------------------------------

def check_transport(seed: int = 0, threads: int = 1, n_substeps: int = 20) -> CheckResult:
    start = time.perf_counter()
    p = get_preset("transport-reflect").problem
    T = p.horizon.T
    mesh = SpaceMesh.uniform(p.domain, 20)
    dpp = compute_value_dpp(p, mesh, MCConfig(64, n_substeps, seed), threads=threads)
    dt = p.horizon.dt / n_substeps
    exact = np.minimum(mesh.nodes[:, 0] + T, 1.0)
    band_dpp = 4 * dt + 2 * interpolation_error_estimate(dpp, 0)
    err_dpp = float(np.max(np.abs(dpp.W[0] - exact)))
    fd = solve_hjb_fd(p, FdGrid.build(p, 1 / 200))
    band_fd = band_dpp
    exact_fd = np.minimum(fd.mesh.nodes[:, 0] + T, 1.0)
    err_fd = float(np.max(np.abs(fd.W[0] - exact_fd)))
    cmp = compare_grids(dpp, fd)
    ok = err_dpp <= band_dpp and err_fd <= band_fd and cmp.max_abs <= band_dpp + band_fd
    return _finish(7, "transport-reflect", ok, max(err_dpp / band_dpp, err_fd / band_fd), 1.0, start, 120.0,
                   dpp_error=err_dpp, fd_error=err_fd, band=float(band_dpp), compare_max_abs=cmp.max_abs)


# 8 ---------------------------------------------------------------------------------------------

def check_dpp_self_consistency(seed: int = 0, threads: int = 1, M: int = 50_000) -> CheckResult:
    start = time.perf_counter()
    p = get_preset("heat-neumann").problem
    mesh = SpaceMesh.uniform(p.domain, 10)
    res = dpp_consistency(p, mesh, MCConfig(M, 100, seed), None, 2, threads)
    return _finish(8, "dpp-consistency", res.worst_ratio <= 3.0, res.worst_ratio, 3.0, start, 180.0,
                   discrepancy=res.discrepancy, combined_se=res.combined_se)


# 9 ---------------------------------------------------------------------------------------------

def holder_quotient(W0: np.ndarray, h: float) -> float:
    return float(np.max(np.abs(np.diff(W0))) / (h + np.sqrt(h)))


def check_holder(seed: int = 0, threads: int = 1, M: int = 10_000, n_substeps: int = 25) -> CheckResult:
    start = time.perf_counter()
    p = get_preset("controlled-drift").problem
    q = {}
    for n_cells in (10, 20):
        mesh = SpaceMesh.uniform(p.domain, n_cells)
        grid = compute_value_dpp(p, mesh, MCConfig(M, n_substeps, seed), threads=threads)
        q[n_cells] = holder_quotient(grid.W[0], mesh.h)
    growth = q[20] / q[10]
    return _finish(9, "holder", growth <= 2.0, growth, 2.0, start, 180.0, quotients={str(k): v for k, v in q.items()})


# 10 --------------------------------------------------------------------------------------------

def with_controls(problem: ProblemSpec, control_set) -> ProblemSpec:
    return ProblemSpec(problem.domain, problem.coeffs, problem.cost, tuple(control_set), problem.horizon)


def with_cost(problem: ProblemSpec, cost: RecursiveCost) -> ProblemSpec:
    return ProblemSpec(problem.domain, problem.coeffs, cost, problem.control_set, problem.horizon)


def check_invariants(seed: int = 0, threads: int = 1, M: int = 10_000, n_substeps: int = 25) -> CheckResult:
    start = time.perf_counter()
    p = get_preset("controlled-drift").problem
    mesh = SpaceMesh.uniform(p.domain, 10)
    mc = MCConfig(M, n_substeps, seed)
    full = compute_value_dpp(p, mesh, mc, threads=threads)
    small = compute_value_dpp(with_controls(p, [[0.0]]), mesh, mc, threads=threads)
    phi = p.cost.phi(mesh.nodes)
    terminal_exact = bool(np.array_equal(full.W[-1], phi) and np.array_equal(small.W[-1], phi))
    comb = np.hypot(full.se, small.se)
    enlarge_excess = float(np.max(small.W - full.W - 3 * comb))

    fd_grid = FdGrid.build(p, 0.02)
    c = p.cost
    upper = RecursiveCost(lambda t, x, y, z, u: c.f(t, x, y, z, u) + 0.05, c.g,
                          lambda x: c.phi(x) + 0.1 * x[:, 0], c.lipschitz_hint)
    w1 = solve_hjb_fd(p, fd_grid)
    w2 = solve_hjb_fd(with_cost(p, upper), fd_grid)
    fd_terminal = bool(np.array_equal(w1.W[-1], p.cost.phi(fd_grid.mesh.nodes)))
    fd_ordered = bool(np.all(w1.W <= w2.W))
    ok = terminal_exact and fd_terminal and enlarge_excess <= 0 and fd_ordered
    return _finish(10, "invariants", ok, enlarge_excess, 0.0, start, 120.0, terminal_exact=terminal_exact,
                   fd_terminal_exact=fd_terminal, fd_ordered=fd_ordered,
                   fd_min_gap=float(np.min(w2.W - w1.W)))


CHECKS: dict[int, Callable[..., CheckResult]] = {
    1: check_skorokhod_pin,
    2: check_k_scaling,
    3: check_flow_stability,
    4: check_oracle_agreement,
    5: check_comparison,
    6: check_heat_neumann,
    7: check_transport,
    8: check_dpp_self_consistency,
    9: check_holder,
    10: check_invariants,
}


def run_acceptance(seed: int = 0, threads: int = 1, only=None) -> list[CheckResult]:
    numbers = sorted(CHECKS) if only is None else sorted(only)
    return [CHECKS[n](seed=seed, threads=threads) for n in numbers]
