"""Explicit monotone finite differences for the HJB equation with a nonlinear Neumann condition.

Nodes whose full 3^d stencil lies in the closure are advanced with the
upwinded Hamiltonian. Boundary nodes are handled per dimension:

* ``d = 1``: the boundary node is advanced by the same update with a ghost
  value ``W_g = W_in + 2h g(t, x, W_bd) / |grad phi|`` across the boundary;
  ``g`` is taken at the new boundary value, so each step solves a scalar
  equation per node.
* ``d = 2``: nodes without a full stencil are fixed after every step by the
  one-sided relation ``(W(x + h_n n) - W(x)) |grad phi| / h_n + g(t, p, W(x)) = 0``
  along the inward normal ``n`` at the nearest boundary point ``p``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .domain import ConvexDomain
from .dpp import ProblemSpec, SpaceMesh, ValueGrid, interpolate
from .errors import BoundarySolveError, CFLError, ContractError

CFL_SAFETY = 0.9


def hamiltonian(problem: ProblemSpec, t: float, x, y: float, p, hess) -> tuple[float, int]:
    """Max over the control set of ``tr(sigma sigma^T X)/2 + p.b + f(t, x, y, p.sigma, u)``."""
    d = problem.domain.dim
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, d)
    p = np.atleast_1d(np.asarray(p, dtype=float)).reshape(d)
    X = np.asarray(hess, dtype=float).reshape(d, d)
    X = 0.5 * (X + X.T)
    best, arg = -math.inf, 0
    for c, u in enumerate(problem.control_set):
        b = problem.coeffs.drift(t, x, u)[0]
        s = problem.coeffs.diffusion(t, x, u)[0]
        z = (p @ s).reshape(1, d)
        val = 0.5 * np.trace(s @ s.T @ X) + p @ b + float(problem.cost.driver(t, x, np.array([y]), z, u)[0])
        if val > best:
            best, arg = float(val), c
    return best, arg


@dataclass
class FdGrid:
    mesh: SpaceMesh
    h: float
    dt: float  # largest admissible step actually used
    cfl_bound: float
    t0: float
    T: float
    interior: np.ndarray  # node indices updated by the scheme
    boundary: np.ndarray  # node indices governed by the Neumann condition
    scheme: str  # ghost | normal
    # per boundary node: nearest boundary point, |grad phi| there, normal step h_n,
    # interpolation stencil of the inward point (normal scheme) or inward sign (ghost scheme)
    bd_point: np.ndarray
    bd_gradnorm: np.ndarray
    bd_hn: np.ndarray
    bd_stencil_nodes: np.ndarray
    bd_stencil_weights: np.ndarray
    bd_sign: np.ndarray | None = None

    @property
    def n_time(self) -> int:
        return int(math.ceil((self.T - self.t0) / self.dt - 1e-9))

    @classmethod
    def build(cls, problem: ProblemSpec, h: float, dt: float | None = None) -> "FdGrid":
        domain = problem.domain
        lo, hi = domain.bounding_box
        n_cells = int(round((hi[0] - lo[0]) / h))
        if n_cells < 2 or not np.allclose((hi - lo) / n_cells, h, rtol=1e-9):
            raise ContractError(f"h={h} must divide every bounding-box side")
        mesh = SpaceMesh.uniform(domain, n_cells)
        hz = problem.horizon
        bound = cfl_bound(problem, mesh.nodes, h)
        if dt is None:
            dt = min(CFL_SAFETY * bound, hz.T - hz.t0)
        elif dt > bound:
            raise CFLError(f"dt_fd={dt:.6g} violates the CFL bound {bound:.6g} (h={h})")
        interior, boundary = _split_nodes(mesh)
        if len(interior) == 0:
            raise ContractError("grid too coarse: no node has a full stencil")
        if domain.dim == 1:
            x = mesh.nodes[boundary]
            g = np.asarray(domain.grad_phi(x), dtype=float).reshape(len(x))
            sign = np.sign(g).astype(int)
            inner = boundary + sign
            return cls(mesh, h, float(dt), bound, hz.t0, hz.T, interior, boundary, "ghost",
                       x, np.abs(g), np.full(len(x), h), inner[:, None], np.ones((len(x), 1)), sign)
        geo = _boundary_geometry(mesh, boundary, interior, h)
        return cls(mesh, h, float(dt), bound, hz.t0, hz.T, interior, boundary, "normal", *geo)


def cfl_bound(problem: ProblemSpec, nodes: np.ndarray, h: float) -> float:
    """``h^2 / (2 d max|sigma sigma^T| + 2 h max|b| + h^2 L_f)`` sampled over nodes, controls and time."""
    d = problem.domain.dim
    a_max = b_max = 0.0
    hz = problem.horizon
    for t in np.unique(np.concatenate([hz.nodes, np.linspace(hz.t0, hz.T, 5)])):
        for u in problem.control_set:
            s = problem.coeffs.diffusion(t, nodes, u)
            a = np.einsum("nij,nkj->nik", s, s)
            a_max = max(a_max, float(np.linalg.norm(a, ord=2, axis=(1, 2)).max()))
            b_max = max(b_max, float(np.linalg.norm(problem.coeffs.drift(t, nodes, u), axis=1).max()))
    denom = 2 * d * a_max + 2 * h * b_max + h * h * problem.cost.lipschitz_hint
    return math.inf if denom == 0 else h * h / denom


def _box_shape(mesh):
    return tuple(len(a) for a in mesh.axes)


def _node_box_index(mesh):
    full = np.flatnonzero(mesh.box_to_node >= 0)
    return full  # node j sits at flat box index full[j]


def _neighbor(mesh, flat, offset):
    shape = _box_shape(mesh)
    idx = np.array(np.unravel_index(flat, shape))
    idx = idx + np.asarray(offset).reshape(-1, 1)
    inside = np.all((idx >= 0) & (idx < np.array(shape).reshape(-1, 1)), axis=0)
    out = np.full(len(flat), -1)
    f = np.ravel_multi_index(tuple(np.clip(idx, 0, np.array(shape).reshape(-1, 1) - 1)), shape)
    out[inside] = mesh.box_to_node[f[inside]]
    return out


def _split_nodes(mesh):
    d = mesh.domain.dim
    flat = _node_box_index(mesh)
    full = np.ones(len(flat), dtype=bool)
    for off in itertools.product((-1, 0, 1), repeat=d):
        if any(off):
            full &= _neighbor(mesh, flat, off) >= 0
    return np.flatnonzero(full), np.flatnonzero(~full)


def _nearest_boundary_point(domain: ConvexDomain, x: np.ndarray) -> np.ndarray:
    """Crossing of phi = 0 along the outward gradient ray from each x."""
    g = np.asarray(domain.grad_phi(x), dtype=float).reshape(x.shape)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    direction = -g / np.where(gn > 0, gn, 1.0)
    ph = np.asarray(domain.phi(x), dtype=float).reshape(len(x))
    lo = np.zeros(len(x))
    hi = np.full(len(x), domain.diameter)
    on = np.abs(ph) <= domain.boundary_tol
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        inside = domain.phi(x + mid[:, None] * direction) >= 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    out = x + lo[:, None] * direction
    out[on] = x[on]
    return out


def _boundary_geometry(mesh, boundary, interior, h):
    domain = mesh.domain
    d = domain.dim
    x = mesh.nodes[boundary]
    p = _nearest_boundary_point(domain, x)
    g = np.asarray(domain.grad_phi(p), dtype=float).reshape(len(p), d)
    gn = np.linalg.norm(g, axis=1)
    nhat = g / gn[:, None]
    is_interior = np.zeros(len(mesh), dtype=bool)
    is_interior[interior] = True
    n_corner = 2 ** d
    hn = np.empty(len(boundary))
    st_nodes = np.zeros((len(boundary), n_corner), dtype=int)
    st_w = np.zeros((len(boundary), n_corner))
    for b in range(len(boundary)):
        for m in np.arange(1.0, 6.01, 0.5):
            q = x[b] + m * h * nhat[b]
            nodes, w = _stencil(mesh, q)
            used = w > 1e-12
            if np.all(nodes[used] >= 0) and np.all(is_interior[nodes[used]]):
                hn[b] = m * h
                st_nodes[b] = np.where(nodes >= 0, nodes, 0)
                st_w[b] = np.where(used, w, 0.0)
                break
        else:
            raise ContractError(f"no interior stencil along the normal at node {boundary[b]}")
    return p, gn, hn, st_nodes, st_w


def _stencil(mesh, q):
    d = len(q)
    base, frac = [], []
    for k, ax in enumerate(mesh.axes):
        s = (q[k] - ax[0]) / (ax[1] - ax[0])
        j = int(np.clip(np.floor(s + 1e-12), 0, len(ax) - 2))
        base.append(j)
        frac.append(min(max(s - j, 0.0), 1.0))
    shape = _box_shape(mesh)
    nodes, weights = [], []
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(base[k] + corner[k] for k in range(d))
        w = np.prod([frac[k] if corner[k] else 1.0 - frac[k] for k in range(d)])
        nodes.append(mesh.box_to_node[np.ravel_multi_index(idx, shape)])
        weights.append(w)
    return np.array(nodes), np.array(weights)


class _Stepper:
    """Precomputed neighbor tables for the explicit update."""

    def __init__(self, problem: ProblemSpec, grid: FdGrid):
        self.problem, self.grid = problem, grid
        mesh = grid.mesh
        d = mesh.domain.dim
        flat = _node_box_index(mesh)[grid.interior]
        self.x = mesh.nodes[grid.interior]
        self.plus = [_neighbor(mesh, flat, np.eye(d, dtype=int)[i]) for i in range(d)]
        self.minus = [_neighbor(mesh, flat, -np.eye(d, dtype=int)[i]) for i in range(d)]
        self.cross = {}
        for i, j in itertools.combinations(range(d), 2):
            e_i, e_j = np.eye(d, dtype=int)[i], np.eye(d, dtype=int)[j]
            self.cross[i, j] = tuple(_neighbor(mesh, flat, s1 * e_i + s2 * e_j)
                                     for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)))

    def interior_update(self, W: np.ndarray, t: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
        problem, h = self.problem, self.grid.h
        d = problem.domain.dim
        idx = self.grid.interior
        w0 = W[idx]
        fwd = np.stack([(W[self.plus[i]] - w0) / h for i in range(d)], axis=1)
        bwd = np.stack([(w0 - W[self.minus[i]]) / h for i in range(d)], axis=1)
        central = 0.5 * (fwd + bwd)
        second = np.stack([(W[self.plus[i]] - 2 * w0 + W[self.minus[i]]) / (h * h) for i in range(d)], axis=1)
        best = np.full(len(idx), -np.inf)
        arg = np.zeros(len(idx), dtype=int)
        for c, u in enumerate(problem.control_set):
            b = problem.coeffs.drift(t, self.x, u)
            s = problem.coeffs.diffusion(t, self.x, u)
            a = np.einsum("nij,nkj->nik", s, s)
            val = 0.5 * np.einsum("nii,ni->n", a, second)
            for (i, j), (pp, pm, mp, mm) in self.cross.items():
                val = val + a[:, i, j] * (W[pp] - W[pm] - W[mp] + W[mm]) / (4 * h * h)
            val = val + np.sum(np.where(b >= 0, b * fwd, b * bwd), axis=1)
            z = np.einsum("ni,nij->nj", central, s)
            val = val + problem.cost.driver(t, self.x, w0, z, u)
            better = val > best
            best = np.where(better, val, best)
            arg = np.where(better, c, arg)
        return w0 + dt * best, arg

    def boundary_update(self, W_old: np.ndarray, W_new: np.ndarray, t: float, dt: float) -> np.ndarray:
        grid, cost = self.grid, self.problem.cost
        p = grid.bd_point
        if grid.scheme == "normal":
            wq = np.sum(W_new[grid.bd_stencil_nodes] * grid.bd_stencil_weights, axis=1)
            c = grid.bd_hn / grid.bd_gradnorm
            return _solve_neumann(lambda w: w - wq - c * cost.boundary(t, p, w), wq, grid.boundary)
        # ghost scheme (d = 1): explicit in the old layer except for g(t, x, W_bd)
        problem, h = self.problem, grid.h
        w_old = W_old[grid.boundary]
        w_in = W_old[grid.bd_stencil_nodes[:, 0]]
        sign = grid.bd_sign
        c = 2.0 * h / grid.bd_gradnorm
        coef = [(problem.coeffs.drift(t, p, u)[:, 0], problem.coeffs.diffusion(t, p, u)[:, 0, 0])
                for u in problem.control_set]

        def ham(w):
            w_g = w_in + c * cost.boundary(t, p, w)
            right = np.where(sign > 0, w_in, w_g)
            left = np.where(sign > 0, w_g, w_in)
            fwd, bwd = (right - w_old) / h, (w_old - left) / h
            best = np.full(len(w), -np.inf)
            for (b, s), u in zip(coef, problem.control_set):
                z = (0.5 * (fwd + bwd) * s)[:, None]
                val = (0.5 * s * s * (right - 2 * w_old + left) / (h * h)
                       + np.where(b >= 0, b * fwd, b * bwd) + cost.driver(t, p, w_old, z, u))
                best = np.maximum(best, val)
            return best

        return _solve_neumann(lambda w: w - w_old - dt * ham(w), w_old + dt * ham(w_old), grid.boundary)


def _solve_neumann(F, w_start, node_ids, tol=1e-12, max_iter=50):
    """Root of the increasing scalar map ``F`` per node (safeguarded Newton)."""
    w = w_start.copy()
    fw = F(w)
    done = np.abs(fw) <= tol * np.maximum(1.0, np.abs(w))
    if np.all(done):
        return w
    r = np.maximum(2.0 * np.abs(fw), 1e-8)
    lo, hi = w - r, w + r
    for _ in range(60):
        flo, fhi = F(lo), F(hi)
        bad_lo, bad_hi = flo > 0, fhi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - 2 * (hi - lo), lo)
        hi = np.where(bad_hi, hi + 2 * (hi - lo), hi)
    for _ in range(max_iter):
        eps = 1e-7 * (1.0 + np.abs(w))
        dF = (F(w + eps) - F(w - eps)) / (2 * eps)
        newton = w - fw / np.where(np.abs(dF) > 1e-14, dF, 1.0)
        ok = (newton > lo) & (newton < hi) & np.isfinite(newton)
        w_new = np.where(done, w, np.where(ok, newton, 0.5 * (lo + hi)))
        f_new = F(w_new)
        lo = np.where(f_new <= 0, w_new, lo)
        hi = np.where(f_new >= 0, w_new, hi)
        w, fw = w_new, f_new
        done = np.abs(fw) <= tol * np.maximum(1.0, np.abs(w))
        if np.all(done):
            return w
    k = int(np.flatnonzero(~done)[0])
    raise BoundarySolveError(f"Neumann boundary solve did not converge at node {node_ids[k]} "
                             f"(residual {abs(fw[k]):.3e})")


def fd_step(problem: ProblemSpec, grid: FdGrid, W_next: np.ndarray, t: float, dt: float | None = None,
            stepper: _Stepper | None = None) -> np.ndarray:
    """One backward step from the layer ``W_next`` to time ``t``."""
    st = stepper or _Stepper(problem, grid)
    dt = grid.dt if dt is None else dt
    W = np.array(W_next, dtype=float, copy=True)
    W[grid.interior], _ = st.interior_update(W_next, t, dt)
    W[grid.boundary] = st.boundary_update(W_next, W, t, dt)
    return W


def solve_hjb_fd(problem: ProblemSpec, grid: FdGrid) -> ValueGrid:
    """Backward explicit time stepping from ``W(T) = Phi``; layers recorded at the macro nodes."""
    times = problem.horizon.nodes
    mesh = grid.mesh
    st = _Stepper(problem, grid)
    W = problem.cost.phi(mesh.nodes).astype(float).copy()
    out = np.empty((len(times), len(mesh)))
    pol = np.zeros((len(times) - 1, len(mesh)), dtype=int)
    out[-1] = W
    for k in range(len(times) - 2, -1, -1):
        span = times[k + 1] - times[k]
        n = max(1, int(math.ceil(span / grid.dt - 1e-9)))
        dt = span / n
        for m in range(n - 1, -1, -1):
            t = times[k] + m * dt
            W_new = W.copy()
            W_new[grid.interior], arg = st.interior_update(W, t, dt)
            W_new[grid.boundary] = st.boundary_update(W, W_new, t, dt)
            W = W_new
        pol[k, grid.interior] = arg
        if not np.all(np.isfinite(W)):
            raise BoundarySolveError(f"non-finite FD values at t={times[k]:.6g}")
        out[k] = W
    return ValueGrid(times, mesh, out, "fd", None, pol, {"dt_fd": grid.dt, "cfl_bound": grid.cfl_bound})


@dataclass
class GridComparison:
    max_abs: float
    l2: float
    per_time: list  # rows of (t, max_abs, l2)


def compare_grids(a: ValueGrid, b: ValueGrid) -> GridComparison:
    """Error norms of ``b`` against ``a`` on ``a``'s nodes, over their common times."""
    da, db = a.mesh.domain, b.mesh.domain
    if da.dim != db.dim:
        raise ContractError("grids live in different dimensions")
    (la, ha), (lb, hb) = da.bounding_box, db.bounding_box
    if np.any(np.minimum(ha, hb) < np.maximum(la, lb)):
        raise ContractError("grids cover disjoint domains")
    same_nodes = len(a.mesh) == len(b.mesh) and np.allclose(a.mesh.nodes, b.mesh.nodes)
    rows = []
    for i, t in enumerate(a.times):
        j = np.flatnonzero(np.isclose(b.times, t, atol=1e-12))
        if not len(j):
            continue
        wb = b.W[j[0]] if same_nodes else interpolate(b.mesh, b.W[j[0]], a.mesh.nodes)[0]
        diff = np.abs(a.W[i] - wb)
        rows.append((float(t), float(diff.max()), float(np.sqrt(np.mean(diff ** 2)))))
    if not rows:
        raise ContractError("grids share no time layer")
    return GridComparison(max(r[1] for r in rows), float(np.sqrt(np.mean([r[2] ** 2 for r in rows]))), rows)
