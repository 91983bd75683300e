"""Least-squares Monte Carlo solver for generalized BSDEs.

The driver is integrated against both dt and the boundary increments dK of a
:class:`~reflectctl.rsde.ReflectedPathBundle`. Conditional expectations are
global per-step regressions on a polynomial or cell-indicator basis of the
current state.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import BasisError, DivergenceError, PreconditionError
from .rsde import ReflectedPathBundle

N_BOOTSTRAP = 200


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class RecursiveCost:
    """Generator ``f(t, x, y, z, u)``, boundary generator ``g(t, x, y)``, terminal ``Phi(x)``.

    Vectorized over paths: ``x`` is ``(n, d)``, ``y`` is ``(n,)``, ``z`` is
    ``(n, d)``; ``u`` is one control point. Each returns an ``(n,)`` array or
    something broadcastable to it.
    """

    f: Callable
    g: Callable
    terminal: Callable
    lipschitz_hint: float = 1.0

    def driver(self, t, x, y, z, u) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f(t, x, y, z, u), dtype=float), (len(x),))

    def boundary(self, t, x, y) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.g(t, x, y), dtype=float), (len(x),))

    def phi(self, x) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.terminal(x), dtype=float), (len(x),))


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "polynomial"  # polynomial | piecewise_constant
    degree: int = 3
    cells: int = 10

    @classmethod
    def default(cls, dim: int) -> "BasisSpec":
        return cls("polynomial", degree=3 if dim == 1 else 2)

    def design(self, x: np.ndarray, box) -> np.ndarray:
        lo, hi = box
        s = 2.0 * (x - lo) / (hi - lo) - 1.0
        n, d = s.shape
        if self.kind == "polynomial":
            cols = [np.ones(n)]
            for deg in range(1, self.degree + 1):
                for combo in itertools.combinations_with_replacement(range(d), deg):
                    cols.append(np.prod(s[:, combo], axis=1))
            return np.column_stack(cols)
        if self.kind == "piecewise_constant":
            ij = np.clip(np.floor((s + 1.0) * 0.5 * self.cells).astype(int), 0, self.cells - 1)
            flat = np.zeros(n, dtype=int)
            for axis in range(d):
                flat = flat * self.cells + ij[:, axis]
            occupied, inv = np.unique(flat, return_inverse=True)
            # empty cells carry no sampled state; their columns are dropped
            A = np.zeros((n, len(occupied)))
            A[np.arange(n), inv] = 1.0
            return A
        raise PreconditionError(f"unknown basis kind {self.kind!r}")


@dataclass
class GbsdeSolution:
    Y: np.ndarray  # (M, n + 1) on the solved window
    Z: np.ndarray  # (M, n, d)
    y0: float
    y0_se: float
    first_step: int = 0
    # per-path eta + sum f dt + sum g dK along the window (bootstrap input)
    path_sum: np.ndarray | None = None


class _Regressor:
    """Fit/predict of per-step conditional expectations."""

    def __init__(self, x: np.ndarray, basis: BasisSpec, box, step: int, fit_rows, spread_tol: float):
        self.step = step
        self.fit_rows = fit_rows
        spread = np.ptp(x[fit_rows], axis=0).max() if len(x[fit_rows]) else 0.0
        self.degenerate = spread <= spread_tol
        if self.degenerate:
            return
        self.A = basis.design(x, box)
        Af = self.A[fit_rows]
        gram = Af.T @ Af
        scale = np.sqrt(np.diag(gram))
        if np.any(scale == 0):
            raise BasisError(step, int(np.count_nonzero(scale)), gram.shape[0])
        g = gram / np.outer(scale, scale)
        eig = np.linalg.eigvalsh(g)
        rank = int(np.sum(eig > eig.max() * 1e-12))
        if rank < gram.shape[0]:
            raise BasisError(step, rank, gram.shape[0])
        self.scale = scale
        self.gram = g

    def __call__(self, target: np.ndarray) -> np.ndarray:
        if self.degenerate:
            mean = target[self.fit_rows].mean(axis=0)
            return np.broadcast_to(mean, target.shape).copy()
        Af = self.A[self.fit_rows]
        rhs = (Af.T @ target[self.fit_rows]) / (self.scale if target.ndim == 1 else self.scale[:, None])
        coef = np.linalg.solve(self.gram, rhs)
        coef = coef / (self.scale if target.ndim == 1 else self.scale[:, None])
        return self.A @ coef


def _grouped(bundle: ReflectedPathBundle, step: int, fn):
    """Evaluate ``fn(rows, u)`` per control group at ``step``; returns an (M,) array."""
    idx = bundle.control_indices(step)
    used = np.unique(idx)
    if len(used) == 1:
        return fn(slice(None), bundle.control.control_set[used[0]])
    out = np.empty(bundle.M)
    for c in used:
        rows = idx == c
        out[rows] = fn(rows, bundle.control.control_set[c])
    return out


def _bootstrap_se(values: np.ndarray, seed: int) -> float:
    m = len(values)
    if m < 2 or np.ptp(values) == 0:
        return 0.0
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xB007])
    means = np.empty(N_BOOTSTRAP)
    for b in range(N_BOOTSTRAP):
        means[b] = values[rng.integers(0, m, m)].mean()
    return float(means.std(ddof=1))


def _backward(bundle: ReflectedPathBundle, cost: RecursiveCost, eta: np.ndarray, basis: BasisSpec,
              from_step: int, to_step: int, implicit: bool = False, split_paths: bool = False,
              want_se: bool = True) -> GbsdeSolution:
    M, d = bundle.M, bundle.dim
    if M < 1:
        raise PreconditionError("bundle is empty")
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (M,)).copy()
    if not np.all(np.isfinite(eta)):
        raise PreconditionError("terminal values must be finite")
    if not 0 <= from_step <= to_step <= bundle.grid.n_steps:
        raise PreconditionError(f"invalid window [{from_step}, {to_step}]")
    if split_paths and M < 4:
        raise PreconditionError("split_paths needs at least 4 paths")
    fit_rows = slice(0, M // 2) if split_paths else slice(None)
    eval_rows = slice(M // 2, None) if split_paths else slice(None)
    n = to_step - from_step
    dt = bundle.grid.dt
    times = bundle.grid.nodes
    box = bundle.domain.bounding_box
    spread_tol = max(bundle.domain.boundary_tol, 1e-12 * bundle.domain.diameter)

    Y = np.empty((M, n + 1))
    Z = np.zeros((M, n, d))
    Y[:, n] = eta
    # pathwise eta + sum f dt + sum g dK; with an intercept in the basis its mean is y0
    path_sum = eta.copy()
    for k in range(n - 1, -1, -1):
        i = from_step + k
        t, x, y_next = times[i], bundle.X[:, i], Y[:, k + 1]
        reg = _Regressor(x, basis, box, i, fit_rows, spread_tol)
        # centering by E_i[Y_{i+1}] leaves the estimator unbiased and removes its noise floor
        centered = y_next - reg(y_next)
        z = reg(centered[:, None] * bundle.dB[:, i]) / dt
        Z[:, k] = z
        dK = bundle.dK[:, i]

        def rhs(y_arg):
            fv = _grouped(bundle, i, lambda rows, u: cost.driver(t, x[rows], y_arg[rows], z[rows], u))
            gv = cost.boundary(t, x, y_arg)
            return y_next + fv * dt + gv * dK

        target = rhs(y_next)
        y = reg(target)
        if implicit:
            for _ in range(20):
                target = rhs(y)
                y_new = reg(target)
                done = np.max(np.abs(y_new - y)) <= 1e-10
                y = y_new
                if done:
                    break
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite Y at step {i}")
        path_sum += target - y_next
        Y[:, k] = y
    y0 = float(np.mean(Y[eval_rows, 0]))
    path_sum = path_sum[eval_rows]
    se = _bootstrap_se(path_sum, bundle.seed) if want_se else float("nan")
    return GbsdeSolution(Y, Z, y0, se, from_step, path_sum)


def solve_gbsde(bundle: ReflectedPathBundle, cost: RecursiveCost, basis: BasisSpec | None = None, *,
                implicit: bool = False, split_paths: bool = False) -> GbsdeSolution:
    """Backward induction from ``Y_N = Phi(X_N)`` over the whole bundle."""
    basis = basis or BasisSpec.default(bundle.dim)
    eta = cost.phi(bundle.X[:, -1])
    return _backward(bundle, cost, eta, basis, 0, bundle.grid.n_steps, implicit, split_paths)


def backward_semigroup(bundle: ReflectedPathBundle, cost: RecursiveCost, eta, basis: BasisSpec | None = None,
                       from_step: int = 0, to_step: int | None = None, *, implicit: bool = False):
    """Value at ``from_step`` of the GBSDE on ``[from_step, to_step]`` with terminal data ``eta``.

    Returns a scalar when the states at ``from_step`` are a point mass,
    otherwise the per-path regressed values.
    """
    basis = basis or BasisSpec.default(bundle.dim)
    to_step = bundle.grid.n_steps if to_step is None else to_step
    sol = _backward(bundle, cost, eta, basis, from_step, to_step, implicit, want_se=False)
    y = sol.Y[:, 0]
    if np.ptp(bundle.X[:, from_step], axis=0).max() <= max(bundle.domain.boundary_tol, 1e-12):
        return float(y.mean())
    return y


def semigroup_estimate(bundle, cost, eta, basis=None, from_step=0, to_step=None, *, implicit=False,
                       split_paths=False) -> Estimate:
    """Like :func:`backward_semigroup` from a deterministic start, with a bootstrap standard error."""
    basis = basis or BasisSpec.default(bundle.dim)
    to_step = bundle.grid.n_steps if to_step is None else to_step
    sol = _backward(bundle, cost, eta, basis, from_step, to_step, implicit, split_paths)
    return Estimate(sol.y0, sol.y0_se)


def direct_expectation_oracle(bundle: ReflectedPathBundle, f0: Callable, g0: Callable, eta) -> Estimate:
    """Plain Monte Carlo average of ``eta + sum f0 dt + sum g0 dK``; regression free."""
    M, n = bundle.M, bundle.grid.n_steps
    dt = bundle.grid.dt
    total = np.broadcast_to(np.asarray(eta, dtype=float), (M,)).copy()
    times = bundle.grid.nodes
    for i in range(n):
        x = bundle.X[:, i]
        fv = _grouped(bundle, i, lambda rows, u: np.broadcast_to(
            np.asarray(f0(times[i], x[rows], u), dtype=float), (len(x[rows]),)))
        gv = np.broadcast_to(np.asarray(g0(times[i], x), dtype=float), (M,))
        total += fv * dt + gv * bundle.dK[:, i]
    se = float(total.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return Estimate(float(total.mean()), se)
