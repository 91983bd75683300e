"""Named test problems and the affine coefficient tables accepted by the config loader."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import get_domain
from .dpp import ProblemSpec
from .errors import ConfigError
from .gbsde import RecursiveCost
from .rsde import Coefficients, TimeGrid


@dataclass(frozen=True)
class Preset:
    problem: ProblemSpec
    yz_free: bool
    description: str


def _terminal(kind: str, coef) -> Callable:
    coef = np.atleast_1d(np.asarray(coef, dtype=float))
    if kind == "const":
        return lambda x: np.full(len(x), coef[0])
    if kind == "linear":
        # coef = [c0, c1, ..., cd]
        return lambda x: coef[0] + x @ coef[1:]
    if kind == "cos_pi":
        return lambda x: coef[0] * np.prod(np.cos(np.pi * x), axis=1)
    if kind == "sin_pi":
        return lambda x: coef[0] * np.prod(np.sin(np.pi * x), axis=1)
    raise ConfigError(f"unknown terminal kind {kind!r}")


def affine_problem(domain_name: str, control_set, T: float, macro_intervals: int, *,
                   b: dict | None = None, sigma: dict | None = None, f: dict | None = None,
                   g: dict | None = None, terminal: dict | None = None, t0: float = 0.0,
                   lipschitz_hint: float = 1.0) -> ProblemSpec:
    """Problem whose coefficients are affine tables.

    * ``b = const + X x + U u``
    * ``sigma = const + sum_k u_k S_k``  (``S`` has shape ``(m, d, d)``)
    * ``f = const + x.fx + y fy + z.fz + u.fu + (u.u) fu2``
    * ``g = const + y gy``
    """
    domain = get_domain(domain_name)
    d = domain.dim
    cs = [np.atleast_1d(np.asarray(u, dtype=float)) for u in control_set]
    m = len(cs[0])
    b = b or {}
    sigma = sigma or {}
    f = f or {}
    g = g or {}
    terminal = terminal or {"kind": "const", "coef": 0.0}
    b0 = np.asarray(b.get("const", np.zeros(d)), dtype=float).reshape(d)
    bx = np.asarray(b.get("x", np.zeros((d, d))), dtype=float).reshape(d, d)
    bu = np.asarray(b.get("u", np.zeros((d, m))), dtype=float).reshape(d, m)
    s0 = np.asarray(sigma.get("const", np.zeros((d, d))), dtype=float).reshape(d, d)
    su = np.asarray(sigma.get("u", np.zeros((m, d, d))), dtype=float).reshape(m, d, d)
    f0 = float(f.get("const", 0.0))
    fx = np.asarray(f.get("x", np.zeros(d)), dtype=float).reshape(d)
    fy = float(f.get("y", 0.0))
    fz = np.asarray(f.get("z", np.zeros(d)), dtype=float).reshape(d)
    fu = np.asarray(f.get("u", np.zeros(m)), dtype=float).reshape(m)
    fu2 = float(f.get("u2", 0.0))
    g0, gy = float(g.get("const", 0.0)), float(g.get("y", 0.0))

    coeffs = Coefficients(
        b=lambda t, x, u: b0 + x @ bx.T + bu @ u,
        sigma=lambda t, x, u: s0 + np.tensordot(u, su, axes=1),
        lipschitz_hint=lipschitz_hint,
    )
    cost = RecursiveCost(
        f=lambda t, x, y, z, u: f0 + x @ fx + fy * y + z @ fz + fu @ u + fu2 * (u @ u),
        g=lambda t, x, y: g0 + gy * y,
        terminal=_terminal(terminal["kind"], terminal.get("coef", 1.0)),
        lipschitz_hint=lipschitz_hint,
    )
    return ProblemSpec(domain, coeffs, cost, tuple(cs), TimeGrid(t0, T, macro_intervals))


def _zero_cost():
    p = affine_problem("interval01", [[0.0]], 1.0, 2, sigma={"const": [[1.0]]},
                       terminal={"kind": "const", "coef": 0.5})
    return Preset(p, True, "sigma=1, b=f=g=0, Phi=0.5: W is identically 0.5")


def _heat_neumann():
    p = affine_problem("interval01", [[0.0]], 1.0, 1, sigma={"const": [[1.0]]},
                       terminal={"kind": "cos_pi", "coef": 1.0})
    return Preset(p, True, "reflected BM, Phi=cos(pi x), T=1: W(0,x)=exp(-pi^2/2)cos(pi x)")


def _transport_reflect():
    p = affine_problem("interval01", [[-1.0], [1.0]], 0.5, 5, b={"u": [[1.0]]},
                       terminal={"kind": "linear", "coef": [0.0, 1.0]})
    return Preset(p, True, "b=u, U={-1,+1}, sigma=0, Phi=x, T=0.5: W(t,x)=min(x+T-t,1)")


def _controlled_drift():
    p = affine_problem("interval01", [[-1.0], [0.0], [1.0]], 0.5, 2, b={"u": [[1.0]]},
                       sigma={"const": [[0.5]]}, f={"y": 0.1, "u2": -0.25},
                       g={"const": -0.2, "y": -0.1}, terminal={"kind": "sin_pi", "coef": 1.0},
                       lipschitz_hint=2.0)
    return Preset(p, False, "b=u, U={-1,0,1}, sigma=0.5, f=0.1y-u^2/4, g=-0.2-0.1y, Phi=sin(pi x)")


def _boundary_cost():
    p = affine_problem("interval01", [[0.0]], 0.5, 1, sigma={"const": [[1.0]]}, g={"const": 1.0})
    return Preset(p, True, "reflected BM with unit boundary cost: W(0,x)=E[K_T]")


def _drift_running_cost():
    p = affine_problem("interval01", [[0.0]], 0.5, 1, b={"const": [0.5]}, sigma={"const": [[0.7]]},
                       f={"x": [1.0]}, g={"const": 0.5}, terminal={"kind": "linear", "coef": [0.0, 1.0]})
    return Preset(p, True, "b=0.5, sigma=0.7, f=x, g=0.5, Phi=x")


PRESETS = {
    "zero-cost": _zero_cost,
    "heat-neumann": _heat_neumann,
    "transport-reflect": _transport_reflect,
    "controlled-drift": _controlled_drift,
    "boundary-cost": _boundary_cost,
    "drift-running-cost": _drift_running_cost,
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def yz_free_parts(problem: ProblemSpec):
    """``(f0(t, x, u), g0(t, x))`` from a problem whose drivers ignore ``(y, z)``."""
    cost, d = problem.cost, problem.domain.dim

    def f0(t, x, u):
        return cost.driver(t, x, np.zeros(len(x)), np.zeros((len(x), d)), u)

    def g0(t, x):
        return cost.boundary(t, x, np.zeros(len(x)))

    return f0, g0
