"""Bounded convex domains described by a defining function phi.

``D = {phi > 0}``, ``dD = {phi = 0}`` and ``grad phi`` is the inward unit
normal on the boundary. All callables are vectorized: they take points of
shape ``(d,)`` or ``(n, d)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import ContractError, PreconditionError

ArrayFn = Callable[[np.ndarray], np.ndarray]


class Region(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class ConvexDomain:
    name: str
    dim: int
    phi: ArrayFn
    grad_phi: ArrayFn
    hess_phi: ArrayFn
    bounding_box: tuple[np.ndarray, np.ndarray]
    boundary_tol: float | None = None
    centroid: np.ndarray | None = None
    # closed-form Euclidean projection onto the closure, if known
    projector: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = (np.asarray(v, dtype=float).reshape(self.dim) for v in self.bounding_box)
        if np.any(hi <= lo):
            raise ContractError("bounding box must have positive extent on every axis")
        object.__setattr__(self, "bounding_box", (lo, hi))
        if self.boundary_tol is None:
            object.__setattr__(self, "boundary_tol", 1e-10 * self.diameter)
        if self.centroid is None:
            object.__setattr__(self, "centroid", 0.5 * (lo + hi))
        else:
            object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=float).reshape(self.dim))

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    def _points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1
        x2 = x.reshape(1, -1) if single else x
        if x2.shape[-1] != self.dim:
            raise ContractError(f"point dimension {x2.shape[-1]} does not match domain dimension {self.dim}")
        if not np.all(np.isfinite(x2)):
            raise ContractError("points must be finite")
        return x2, single


def eval_phi(domain: ConvexDomain, x) -> np.ndarray | float:
    pts, single = domain._points(x)
    val = np.asarray(domain.phi(pts), dtype=float).reshape(len(pts))
    return float(val[0]) if single else val


def inward_normal(domain: ConvexDomain, x) -> np.ndarray:
    """Return grad phi at boundary point(s) ``x``."""
    pts, single = domain._points(x)
    ph = np.abs(np.asarray(domain.phi(pts), dtype=float).reshape(len(pts)))
    bad = ph > domain.boundary_tol
    if np.any(bad):
        raise PreconditionError(
            f"point is not on the boundary: |phi(x)| = {ph[bad].max():.3e} > tol {domain.boundary_tol:.3e}"
        )
    g = np.asarray(domain.grad_phi(pts), dtype=float).reshape(len(pts), domain.dim)
    return g[0] if single else g


def classify(domain: ConvexDomain, x) -> Region | np.ndarray:
    pts, single = domain._points(x)
    ph = np.asarray(domain.phi(pts), dtype=float).reshape(len(pts))
    tol = domain.boundary_tol
    out = np.where(np.abs(ph) <= tol, Region.BOUNDARY, np.where(ph > tol, Region.INTERIOR, Region.EXTERIOR))
    return out[0] if single else out


def in_closure(domain: ConvexDomain, x) -> np.ndarray | bool:
    pts, single = domain._points(x)
    ok = np.asarray(domain.phi(pts), dtype=float).reshape(len(pts)) >= -domain.boundary_tol
    return bool(ok[0]) if single else ok


def project_to_closure(domain: ConvexDomain, x) -> tuple[np.ndarray, np.ndarray | float]:
    """Euclidean projection onto the closure and the displacement |x - p|."""
    pts, single = domain._points(x)
    if domain.projector is not None:
        p = np.asarray(domain.projector(pts), dtype=float).reshape(pts.shape)
    else:
        p = _iterative_projection(domain, pts)
    dist = np.linalg.norm(pts - p, axis=1)
    if single:
        return p[0], float(dist[0])
    return p, dist


def _iterative_projection(domain: ConvexDomain, pts: np.ndarray, max_iter: int = 50) -> np.ndarray:
    out = pts.copy()
    ph = np.asarray(domain.phi(pts), dtype=float).reshape(len(pts))
    tol = domain.boundary_tol
    for k in np.flatnonzero(ph < -tol):
        out[k] = _project_one(domain, pts[k], tol, max_iter)
    return out


def _boundary_crossing(domain, inside, outside, tol):
    # phi changes sign exactly once on the segment (convexity)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        q = inside + mid * (outside - inside)
        v = float(domain.phi(q[None, :])[0])
        if abs(v) <= tol:
            return q
        if v > 0:
            lo = mid
        else:
            hi = mid
    return inside + lo * (outside - inside)


def _project_one(domain, x, tol, max_iter):
    d = domain.dim
    p = _boundary_crossing(domain, domain.centroid, x, tol)
    g = np.asarray(domain.grad_phi(p[None, :]), dtype=float).reshape(d)
    lam = float(-(x - p) @ g / max(g @ g, 1e-300))
    for _ in range(max_iter):
        # Newton on the KKT system  p - x + lam * grad phi(p) = 0,  phi(p) = 0
        g = np.asarray(domain.grad_phi(p[None, :]), dtype=float).reshape(d)
        H = np.asarray(domain.hess_phi(p[None, :]), dtype=float).reshape(d, d)
        ph = float(domain.phi(p[None, :])[0])
        r = np.concatenate([p - x + lam * g, [ph]])
        if np.linalg.norm(r) <= tol:
            break
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = np.eye(d) + lam * H
        J[:d, d] = g
        J[d, :d] = g
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        cand = p + step[:d]
        if not np.all(np.isfinite(cand)):
            break
        if float(domain.phi(cand[None, :])[0]) < -tol:
            # pull back onto the boundary along the chord from the centroid
            cand = _boundary_crossing(domain, domain.centroid, cand, tol)
        p, lam = cand, lam + step[d]
    if _is_kkt(domain, x, p, tol):
        # a KKT point of a convex projection is the global minimizer
        return p
    return _slsqp_projection(domain, x, p, tol)


def _is_kkt(domain, x, p, tol):
    d = domain.dim
    if abs(float(domain.phi(p[None, :])[0])) > tol:
        return False
    g = np.asarray(domain.grad_phi(p[None, :]), dtype=float).reshape(d)
    v = x - p
    lam = -float(v @ g) / max(float(g @ g), 1e-300)
    scale = max(np.linalg.norm(v), 1.0)
    return lam > 0 and np.linalg.norm(v + lam * g) <= 1e-8 * scale


def _slsqp_projection(domain, x, start, tol):
    d = domain.dim
    res = minimize(
        lambda q: 0.5 * float((q - x) @ (q - x)),
        start,
        jac=lambda q: q - x,
        constraints=[{
            "type": "ineq",
            "fun": lambda q: float(domain.phi(q[None, :])[0]),
            "jac": lambda q: np.asarray(domain.grad_phi(q[None, :]), dtype=float).reshape(d),
        }],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 200},
    )
    p = res.x
    if float(domain.phi(p[None, :])[0]) < -tol:
        p = _boundary_crossing(domain, domain.centroid, p, tol)
    return p


# --- built-in domains -------------------------------------------------------

def interval01() -> ConvexDomain:
    return ConvexDomain(
        name="interval01",
        dim=1,
        phi=lambda x: x[:, 0] * (1.0 - x[:, 0]),
        grad_phi=lambda x: 1.0 - 2.0 * x,
        hess_phi=lambda x: np.full((len(x), 1, 1), -2.0),
        bounding_box=(np.array([0.0]), np.array([1.0])),
        centroid=np.array([0.5]),
        projector=lambda x: np.clip(x, 0.0, 1.0),
    )


def _disk_project(x):
    r = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(r > 1.0, x / np.where(r > 0, r, 1.0), x)


def disk2() -> ConvexDomain:
    return ConvexDomain(
        name="disk2",
        dim=2,
        phi=lambda x: 0.5 * (1.0 - np.sum(x * x, axis=1)),
        grad_phi=lambda x: -x,
        hess_phi=lambda x: np.broadcast_to(-np.eye(2), (len(x), 2, 2)).copy(),
        bounding_box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        centroid=np.zeros(2),
        projector=_disk_project,
    )


BUILTIN_DOMAINS = {"interval01": interval01, "disk2": disk2}


def get_domain(name: str) -> ConvexDomain:
    try:
        return BUILTIN_DOMAINS[name]()
    except KeyError:
        raise ContractError(f"unknown domain {name!r}; choose from {sorted(BUILTIN_DOMAINS)}") from None
