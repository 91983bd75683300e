"""Projected Euler simulation of controlled reflected SDEs.

Each step moves the state by the Euler increment and projects it back onto
the closure of the domain; the projection distance is the increment of the
boundary process K.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import ConvexDomain, in_closure, project_to_closure
from .errors import ContractError, NumericalError, PreconditionError

# paths are grouped into fixed-size blocks, one Philox stream per block
BLOCK_SIZE = 1024


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.t0 < self.T:
            raise ContractError(f"time grid needs t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) < 1:
            raise ContractError("time grid needs at least one step")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @classmethod
    def with_default_step(cls, t0: float, T: float) -> "TimeGrid":
        # default dt = 1e-3 * (T - t0)
        return cls(t0, T, 1000)


@dataclass(frozen=True)
class FeedbackTable:
    """Control index per (time cell, space cell) on a uniform box partition."""

    table: np.ndarray  # (n_time_cells, cells_per_axis ** d) of ints
    cells_per_axis: int
    box: tuple[np.ndarray, np.ndarray]

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.box
        n = self.cells_per_axis
        ij = np.floor((x - lo) / (hi - lo) * n).astype(int)
        ij = np.clip(ij, 0, n - 1)
        flat = np.zeros(len(x), dtype=int)
        for axis in range(x.shape[1]):
            flat = flat * n + ij[:, axis]
        return flat


@dataclass(frozen=True)
class ControlPolicy:
    control_set: tuple[np.ndarray, ...]
    kind: str = "constant"  # constant | piecewise_constant | feedback
    index: int = 0
    macro_indices: tuple[int, ...] = ()
    feedback: FeedbackTable | None = None

    def __post_init__(self):
        cs = tuple(np.atleast_1d(np.asarray(u, dtype=float)) for u in self.control_set)
        if not cs:
            raise ContractError("control set must be nonempty")
        object.__setattr__(self, "control_set", cs)
        n = len(cs)
        if self.kind == "constant":
            used = [self.index]
        elif self.kind == "piecewise_constant":
            if not self.macro_indices:
                raise ContractError("piecewise_constant policy needs macro_indices")
            used = list(self.macro_indices)
        elif self.kind == "feedback":
            if self.feedback is None:
                raise ContractError("feedback policy needs a FeedbackTable")
            used = np.unique(self.feedback.table).tolist()
        else:
            raise ContractError(f"unknown policy kind {self.kind!r}")
        if any(not 0 <= int(i) < n for i in used):
            raise ContractError(f"control index out of range for control set of size {n}")

    @classmethod
    def constant(cls, control_set: Sequence, index: int = 0) -> "ControlPolicy":
        return cls(tuple(control_set), "constant", index=index)

    def indices_at(self, step: int, n_steps: int, x: np.ndarray) -> np.ndarray:
        m = len(x)
        if self.kind == "constant":
            return np.full(m, self.index, dtype=int)
        if self.kind == "piecewise_constant":
            k = min(step * len(self.macro_indices) // n_steps, len(self.macro_indices) - 1)
            return np.full(m, self.macro_indices[k], dtype=int)
        fb = self.feedback
        tk = min(step * fb.table.shape[0] // n_steps, fb.table.shape[0] - 1)
        return np.asarray(fb.table[tk], dtype=int)[fb.cell_index(x)]


@dataclass(frozen=True)
class Coefficients:
    """Drift ``b(t, x, u) -> (n, d)`` and diffusion ``sigma(t, x, u) -> (n, d, d)``.

    ``x`` is an ``(n, d)`` array and ``u`` a single control point; outputs are
    broadcast to the full shape, so constants may be returned as scalars.
    """

    b: Callable
    sigma: Callable
    lipschitz_hint: float = 1.0

    def drift(self, t, x, u) -> np.ndarray:
        n, d = x.shape
        return np.broadcast_to(np.asarray(self.b(t, x, u), dtype=float), (n, d))

    def diffusion(self, t, x, u) -> np.ndarray:
        n, d = x.shape
        s = np.asarray(self.sigma(t, x, u), dtype=float)
        if s.ndim <= 1 and d == 1:
            s = s.reshape(-1, 1, 1) if s.ndim == 1 else s.reshape(1, 1, 1)
        return np.broadcast_to(s, (n, d, d))


@dataclass
class ReflectedPathBundle:
    grid: TimeGrid
    X: np.ndarray  # (M, n_steps + 1, d)
    dK: np.ndarray  # (M, n_steps)
    dB: np.ndarray  # (M, n_steps, d)
    seed: int
    control: ControlPolicy
    domain: ConvexDomain = field(repr=False)
    path_offset: int = 0

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[2]

    @property
    def K(self) -> np.ndarray:
        """Cumulative boundary process, ``(M, n_steps + 1)``."""
        out = np.zeros((self.M, self.grid.n_steps + 1))
        np.cumsum(self.dK, axis=1, out=out[:, 1:])
        return out

    def control_indices(self, step: int) -> np.ndarray:
        return self.control.indices_at(step, self.grid.n_steps, self.X[:, step])


def brownian_increments(seed: int, n_paths: int, n_steps: int, dim: int, dt: float,
                        path_offset: int = 0) -> np.ndarray:
    """Gaussian increments ``(n_paths, n_steps, dim)``; path m always gets the same draws."""
    if path_offset % BLOCK_SIZE:
        raise ContractError(f"path_offset must be a multiple of {BLOCK_SIZE}")
    first = path_offset // BLOCK_SIZE
    n_blocks = -(-n_paths // BLOCK_SIZE)
    out = np.empty((n_blocks * BLOCK_SIZE, n_steps, dim))
    ss = np.random.SeedSequence(int(seed))
    for j in range(n_blocks):
        child = np.random.SeedSequence(ss.entropy, spawn_key=(first + j,))
        gen = np.random.Generator(np.random.Philox(child))
        out[j * BLOCK_SIZE:(j + 1) * BLOCK_SIZE] = gen.standard_normal((BLOCK_SIZE, n_steps, dim))
    out = out[:n_paths]
    out *= np.sqrt(dt)
    return out


def simulate_paths(domain: ConvexDomain, coeffs: Coefficients, policy: ControlPolicy, grid: TimeGrid,
                   x0, M: int, seed: int, path_offset: int = 0) -> ReflectedPathBundle:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (domain.dim,):
        raise ContractError(f"x0 must have shape ({domain.dim},), got {x0.shape}")
    if not in_closure(domain, x0):
        raise PreconditionError(f"x0={x0.tolist()} lies outside the closure of {domain.name}")
    if M < 1:
        raise PreconditionError("need at least one path")
    n, d, dt = grid.n_steps, domain.dim, grid.dt
    dB = brownian_increments(seed, M, n, d, dt, path_offset)
    X = np.empty((M, n + 1, d))
    dK = np.empty((M, n))
    X[:, 0] = x0
    times = grid.nodes
    x = X[:, 0].copy()
    for i in range(n):
        t = times[i]
        idx = policy.indices_at(i, n, x)
        step = np.empty_like(x)
        used = np.unique(idx)
        for c in used:
            rows = idx == c if len(used) > 1 else slice(None)
            xs = x[rows]
            u = policy.control_set[c]
            drift = coeffs.drift(t, xs, u)
            diff = coeffs.diffusion(t, xs, u)
            inc = drift * dt + np.einsum("mij,mj->mi", diff, dB[rows, i])
            if not np.all(np.isfinite(inc)):
                bad = np.flatnonzero(~np.all(np.isfinite(inc), axis=1))[0]
                raise NumericalError(
                    f"non-finite coefficient output at t={t:.6g}, x={xs[bad].tolist()}, u={u.tolist()}"
                )
            step[rows] = inc
        x, dist = project_to_closure(domain, x + step)
        X[:, i + 1] = x
        dK[:, i] = dist
    return ReflectedPathBundle(grid, X, dK, dB, int(seed), policy, domain, path_offset)


def iter_bundles(domain, coeffs, policy, grid, x0, M: int, seed: int, chunk: int = 16 * BLOCK_SIZE):
    """Yield sub-bundles covering paths ``0..M-1``; concatenated, they equal one big bundle."""
    chunk = max(BLOCK_SIZE, chunk - chunk % BLOCK_SIZE)
    for start in range(0, M, chunk):
        yield simulate_paths(domain, coeffs, policy, grid, x0, min(chunk, M - start), seed, path_offset=start)


def k_moment(bundle: ReflectedPathBundle, p: float, from_step: int = 0, to_step: int | None = None) -> float:
    """Monte Carlo estimate of ``E[(K_to - K_from)^p]``."""
    to_step = bundle.grid.n_steps if to_step is None else to_step
    if not 0 <= from_step <= to_step <= bundle.grid.n_steps:
        raise PreconditionError(f"need 0 <= from_step <= to_step <= n_steps, got {from_step}, {to_step}")
    inc = bundle.dK[:, from_step:to_step].sum(axis=1)
    return float(np.mean(inc ** p))


def sup_excursion_moment(bundle: ReflectedPathBundle, p: float) -> float:
    """Monte Carlo estimate of ``E[sup_s |X_s - x0|^p]``."""
    if p not in (2, 4, 8):
        raise PreconditionError(f"supported exponents are 2, 4, 8; got {p}")
    dev = np.linalg.norm(bundle.X - bundle.X[:, :1], axis=2).max(axis=1)
    return float(np.mean(dev ** p))
