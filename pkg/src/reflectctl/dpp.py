"""Value function by backward dynamic programming over macro intervals.

On each macro interval every mesh node is started with every candidate
control held constant; the endpoint values of the next time layer are
interpolated from the mesh and pulled back through the GBSDE semigroup.
The node value is the best candidate.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import ConvexDomain, Region, classify, in_closure, project_to_closure
from .errors import ContractError, PreconditionError
from .gbsde import BasisSpec, Estimate, RecursiveCost, _backward, _bootstrap_se, solve_gbsde
from .rsde import Coefficients, ControlPolicy, TimeGrid, simulate_paths

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MCConfig:
    M: int
    n_substeps: int
    seed: int
    split_paths: bool = False
    implicit: bool = False


@dataclass(frozen=True)
class ProblemSpec:
    domain: ConvexDomain
    coeffs: Coefficients
    cost: RecursiveCost
    control_set: tuple
    horizon: TimeGrid  # macro grid

    def __post_init__(self):
        cs = tuple(np.atleast_1d(np.asarray(u, dtype=float)) for u in self.control_set)
        if not cs:
            raise ContractError("control set must be nonempty")
        object.__setattr__(self, "control_set", cs)

    @property
    def growth_constant(self) -> float:
        return max(self.coeffs.lipschitz_hint, self.cost.lipschitz_hint)

    def validate(self, n_samples: int = 64, seed: int = 0) -> None:
        """Spot-check linear growth of b, sigma and f(., 0, 0, .) against the hint constants."""
        rng = np.random.default_rng(seed)
        lo, hi = self.domain.bounding_box
        x = lo + (hi - lo) * rng.random((n_samples, self.domain.dim))
        x, _ = project_to_closure(self.domain, x)
        C = self.growth_constant
        bound = C * (1.0 + np.linalg.norm(x, axis=1)) + 1e-12
        zeros = np.zeros(n_samples)
        zz = np.zeros_like(x)
        for t in np.linspace(self.horizon.t0, self.horizon.T, 3):
            for u in self.control_set:
                bs = np.linalg.norm(self.coeffs.drift(t, x, u), axis=1)
                ss = np.linalg.norm(self.coeffs.diffusion(t, x, u), axis=(1, 2))
                fs = np.abs(self.cost.driver(t, x, zeros, zz, u))
                for name, v in (("|b|+|sigma|", bs + ss), ("|f(t,x,0,0,u)|", fs)):
                    if not np.all(np.isfinite(v)):
                        raise ContractError(f"non-finite {name} at t={t}, u={u.tolist()}")
                    if np.any(v > bound):
                        k = int(np.argmax(v - bound))
                        raise ContractError(
                            f"linear growth check failed for {name} at t={t}, x={x[k].tolist()}, "
                            f"u={u.tolist()} with constant {C}"
                        )


@dataclass
class SpaceMesh:
    """Nodes of a uniform box grid that lie in the closure of the domain."""

    domain: ConvexDomain
    axes: tuple[np.ndarray, ...]
    nodes: np.ndarray  # (n_nodes, d)
    box_to_node: np.ndarray  # flat box index -> node index or -1
    interpolation: str = "multilinear"  # multilinear | nearest

    @classmethod
    def uniform(cls, domain: ConvexDomain, n_cells: int, interpolation: str = "multilinear") -> "SpaceMesh":
        lo, hi = domain.bounding_box
        axes = tuple(np.linspace(lo[k], hi[k], n_cells + 1) for k in range(domain.dim))
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
        keep = in_closure(domain, grid)
        box_to_node = np.full(len(grid), -1)
        box_to_node[keep] = np.arange(int(keep.sum()))
        return cls(domain, axes, grid[keep], box_to_node, interpolation)

    @property
    def h(self) -> float:
        return float(self.axes[0][1] - self.axes[0][0])

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(classify(self.domain, self.nodes) == Region.BOUNDARY)

    def __len__(self):
        return len(self.nodes)


@dataclass
class ValueGrid:
    times: np.ndarray
    mesh: SpaceMesh
    W: np.ndarray  # (n_times, n_nodes)
    provenance: str  # dpp | fd
    se: np.ndarray | None = None
    policy: np.ndarray | None = None  # (n_times - 1, n_nodes) argmax control indices
    warnings: dict = field(default_factory=dict)


def interpolate(mesh: SpaceMesh, values: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, int]:
    """Interpolate nodal ``values`` at ``points``; returns values and the number of clipped queries.

    Exterior points are first projected onto the closure. Stencil corners that
    fall outside the closure are dropped and the remaining weights renormalized.
    """
    domain = mesh.domain
    pts = np.asarray(points, dtype=float).reshape(-1, domain.dim)
    outside = ~in_closure(domain, pts)
    clipped = int(outside.sum())
    if clipped:
        pts = pts.copy()
        pts[outside], _ = project_to_closure(domain, pts[outside])
    if mesh.interpolation == "nearest":
        return values[_nearest(mesh, pts)], clipped

    d = domain.dim
    n_ax = [len(a) for a in mesh.axes]
    base = np.empty((len(pts), d), dtype=int)
    frac = np.empty((len(pts), d))
    for k, ax in enumerate(mesh.axes):
        h = ax[1] - ax[0]
        s = (pts[:, k] - ax[0]) / h
        j = np.clip(np.floor(s).astype(int), 0, n_ax[k] - 2)
        base[:, k] = j
        frac[:, k] = np.clip(s - j, 0.0, 1.0)
    acc = np.zeros(len(pts))
    wsum = np.zeros(len(pts))
    for corner in np.ndindex(*(2,) * d):
        off = np.asarray(corner)
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        flat = np.zeros(len(pts), dtype=int)
        for k in range(d):
            flat = flat * n_ax[k] + base[:, k] + off[k]
        node = mesh.box_to_node[flat]
        ok = node >= 0
        acc[ok] += w[ok] * values[node[ok]]
        wsum[ok] += w[ok]
    out = np.empty(len(pts))
    good = wsum > 1e-14
    out[good] = acc[good] / wsum[good]
    if not np.all(good):
        out[~good] = values[_nearest(mesh, pts[~good])]
    if d > 1:
        # renormalized stencils at the curved boundary count as clipped
        clipped += int(np.sum(wsum[good] < 1.0 - 1e-12))
    return out, clipped


def _nearest(mesh: SpaceMesh, pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts), dtype=int)
    for start in range(0, len(pts), 4096):
        chunk = pts[start:start + 4096]
        d2 = ((chunk[:, None, :] - mesh.nodes[None, :, :]) ** 2).sum(axis=2)
        out[start:start + 4096] = np.argmin(d2, axis=1)
    return out


def interpolation_error_estimate(grid: ValueGrid, time_index: int = 0) -> float:
    """Half the largest second difference of W along any mesh axis.

    Bounds linear-interpolation error both for smooth W (h^2 W''/8) and for a
    kink (slope jump times h/4).
    """
    mesh = grid.mesh
    shape = [len(a) for a in mesh.axes]
    full = np.full(int(np.prod(shape)), np.nan)
    ok = mesh.box_to_node >= 0
    full[ok] = grid.W[time_index][mesh.box_to_node[ok]]
    full = full.reshape(shape)
    worst = 0.0
    for k in range(len(shape)):
        f = np.moveaxis(full, k, 0)
        d2 = f[2:] - 2.0 * f[1:-1] + f[:-2]
        if d2.size and np.any(np.isfinite(d2)):
            worst = max(worst, float(np.nanmax(np.abs(d2))))
    return 0.5 * worst


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def evaluate_cost(problem: ProblemSpec, policy: ControlPolicy, t: float, x, mc: MCConfig,
                  basis: BasisSpec | None = None) -> Estimate:
    """Recursive cost J(t, x; policy) with a bootstrap standard error."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not in_closure(problem.domain, x):
        raise PreconditionError(f"x={x.tolist()} lies outside the closure")
    hz = problem.horizon
    remaining = max(1, int(round((hz.T - t) / hz.dt)))
    grid = TimeGrid(t, hz.T, remaining * mc.n_substeps)
    bundle = simulate_paths(problem.domain, problem.coeffs, policy, grid, x, mc.M, mc.seed)
    sol = solve_gbsde(bundle, problem.cost, basis, implicit=mc.implicit, split_paths=mc.split_paths)
    return Estimate(sol.y0, sol.y0_se)


def compute_value_dpp(problem: ProblemSpec, mesh: SpaceMesh, mc: MCConfig, basis: BasisSpec | None = None,
                      threads: int = 1) -> ValueGrid:
    domain = problem.domain
    basis = basis or BasisSpec.default(domain.dim)
    hz = problem.horizon
    times = hz.nodes
    n_t, n_nodes = len(times), len(mesh)
    W = np.empty((n_t, n_nodes))
    se = np.zeros((n_t, n_nodes))
    pol = np.zeros((n_t - 1, n_nodes), dtype=int)
    W[-1] = problem.cost.phi(mesh.nodes)
    clipped_total = 0

    for k in range(n_t - 2, -1, -1):
        sub = TimeGrid(times[k], times[k + 1], mc.n_substeps)
        seed_k = _derived_seed(mc.seed, k)
        w_next, se_next = W[k + 1], se[k + 1]
        last = k == n_t - 2  # W(T, .) = Phi is known off the mesh too

        def node_value(j):
            best = None
            clipped = 0
            for c in range(len(problem.control_set)):
                policy = ControlPolicy.constant(problem.control_set, c)
                bundle = simulate_paths(domain, problem.coeffs, policy, sub, mesh.nodes[j], mc.M, seed_k)
                end = bundle.X[:, -1]
                if last:
                    eta = problem.cost.phi(end)
                else:
                    eta, n_clip = interpolate(mesh, w_next, end)
                    clipped += n_clip
                sol = _backward(bundle, problem.cost, eta, basis, 0, sub.n_steps, mc.implicit,
                                mc.split_paths, want_se=False)
                if best is None or sol.y0 > best[0]:
                    carried = 0.0 if last else float(np.mean(interpolate(mesh, se_next, end)[0]))
                    best = (sol.y0, c, sol.path_sum, bundle.seed, carried)
            value, c, target, bseed, carried = best
            boot = _bootstrap_se(target, bseed)
            return value, c, float(np.hypot(boot, carried)), clipped

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(node_value, range(n_nodes)))
        else:
            results = [node_value(j) for j in range(n_nodes)]
        for j, (value, c, s, clipped) in enumerate(results):
            W[k, j], pol[k, j], se[k, j] = value, c, s
            clipped_total += clipped
    if clipped_total:
        log.warning("interpolation clipped %d endpoint queries to the closure", clipped_total)
    return ValueGrid(times, mesh, W, "dpp", se, pol, {"interp_clipped": clipped_total})


@dataclass
class ConsistencyResult:
    discrepancy: float
    combined_se: float  # at the node of largest discrepancy
    worst_ratio: float  # max over nodes of |dW| / combined se
    grid_a: ValueGrid
    grid_b: ValueGrid


def dpp_consistency(problem: ProblemSpec, mesh: SpaceMesh, mc: MCConfig, basis: BasisSpec | None,
                    delta_split: int | TimeGrid, threads: int = 1) -> ConsistencyResult:
    hz = problem.horizon
    alt = delta_split if isinstance(delta_split, TimeGrid) else TimeGrid(hz.t0, hz.T, int(delta_split))
    if not (np.isclose(alt.t0, hz.t0) and np.isclose(alt.T, hz.T)):
        raise PreconditionError("both macro grids must share t0 and T")
    # keep the simulation step equal across the two grids
    total = hz.n_steps * mc.n_substeps
    alt_sub = max(1, int(round(total / alt.n_steps)))
    ga = compute_value_dpp(problem, mesh, mc, basis, threads)
    pb = ProblemSpec(problem.domain, problem.coeffs, problem.cost, problem.control_set, alt)
    mcb = MCConfig(mc.M, alt_sub, mc.seed, mc.split_paths, mc.implicit)
    gb = compute_value_dpp(pb, mesh, mcb, basis, threads)
    diff = np.abs(ga.W[0] - gb.W[0])
    comb = np.hypot(ga.se[0], gb.se[0])
    j = int(np.argmax(diff))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(comb > 0, diff / comb, np.where(diff > 1e-10, np.inf, 0.0))
    return ConsistencyResult(float(diff[j]), float(comb[j]), float(ratio.max()), ga, gb)


def check_dpp_consistency(problem: ProblemSpec, mesh: SpaceMesh, mc: MCConfig, basis: BasisSpec | None,
                          delta_split: int | TimeGrid, threads: int = 1) -> float:
    """Largest node discrepancy at t0 between value grids built on two macro grids."""
    return dpp_consistency(problem, mesh, mc, basis, delta_split, threads).discrepancy


def constant_policies(control_set: Sequence) -> list[ControlPolicy]:
    return [ControlPolicy.constant(control_set, c) for c in range(len(control_set))]
