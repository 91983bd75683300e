"""CSV export/import with fixed column orders."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .domain import ConvexDomain
from .dpp import SpaceMesh, ValueGrid
from .errors import ContractError
from .gbsde import GbsdeSolution
from .rsde import ReflectedPathBundle


def _fmt(v) -> str:
    return repr(float(v))


def write_bundle_csv(bundle: ReflectedPathBundle, path, max_paths: int | None = None) -> Path:
    """Columns: path, step, t, x_1..x_d, dK (dK of the step ending at this row; 0 at step 0)."""
    path = Path(path)
    M = bundle.M if max_paths is None else min(bundle.M, max_paths)
    d = bundle.dim
    times = bundle.grid.nodes
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step", "t", *[f"x_{k + 1}" for k in range(d)], "dK"])
        for m in range(M):
            for i in range(bundle.grid.n_steps + 1):
                dk = bundle.dK[m, i - 1] if i else 0.0
                w.writerow([bundle.path_offset + m, i, _fmt(times[i]), *map(_fmt, bundle.X[m, i]), _fmt(dk)])
    return path


def write_solution_csv(bundle: ReflectedPathBundle, sol: GbsdeSolution, path, max_paths: int | None = None) -> Path:
    """Columns: path, step, t, Y, Z_1..Z_d (Z empty at the last step)."""
    path = Path(path)
    M = bundle.M if max_paths is None else min(bundle.M, max_paths)
    d = bundle.dim
    n = sol.Y.shape[1] - 1
    times = bundle.grid.nodes[sol.first_step:sol.first_step + n + 1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step", "t", "Y", *[f"Z_{k + 1}" for k in range(d)]])
        for m in range(M):
            for i in range(n + 1):
                z = [_fmt(v) for v in sol.Z[m, i]] if i < n else [""] * d
                w.writerow([bundle.path_offset + m, sol.first_step + i, _fmt(times[i]), _fmt(sol.Y[m, i]), *z])
    return path


def write_value_grid_csv(grid: ValueGrid, path) -> Path:
    """Columns: provenance, t, x_1..x_d, W, se."""
    path = Path(path)
    d = grid.mesh.nodes.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["provenance", "t", *[f"x_{k + 1}" for k in range(d)], "W", "se"])
        for i, t in enumerate(grid.times):
            for j, x in enumerate(grid.mesh.nodes):
                se = "" if grid.se is None else _fmt(grid.se[i, j])
                w.writerow([grid.provenance, _fmt(t), *map(_fmt, x), _fmt(grid.W[i, j]), se])
    return path


def read_value_grid_csv(path, domain: ConvexDomain) -> ValueGrid:
    """Rebuild a ValueGrid written by :func:`write_value_grid_csv` on a uniform mesh of ``domain``."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractError(f"{path}: empty value grid")
    d = domain.dim
    times = np.unique([float(r["t"]) for r in rows])
    pts = np.unique(np.array([[float(r[f"x_{k + 1}"]) for k in range(d)] for r in rows]), axis=0)
    lo, hi = domain.bounding_box
    n_cells = len(np.unique(pts[:, 0])) - 1
    if d > 1:
        n_cells = int(round((hi[0] - lo[0]) / np.min(np.diff(np.unique(pts[:, 0])))))
    mesh = SpaceMesh.uniform(domain, n_cells)
    if len(mesh) != len(pts):
        raise ContractError(f"{path}: nodes do not form a uniform mesh of {domain.name}")
    W = np.full((len(times), len(mesh)), np.nan)
    se = np.full_like(W, np.nan)
    lookup = {tuple(np.round(x, 12)): j for j, x in enumerate(mesh.nodes)}
    t_index = {t: i for i, t in enumerate(times)}
    for r in rows:
        x = tuple(np.round([float(r[f"x_{k + 1}"]) for k in range(d)], 12))
        if x not in lookup:
            raise ContractError(f"{path}: node {x} is not on the mesh")
        i, j = t_index[float(r["t"])], lookup[x]
        W[i, j] = float(r["W"])
        se[i, j] = float(r["se"]) if r.get("se") else np.nan
    provenance = rows[0]["provenance"]
    return ValueGrid(times, mesh, W, provenance, None if np.all(np.isnan(se)) else se)
