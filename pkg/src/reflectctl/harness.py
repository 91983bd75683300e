"""Run orchestration: build the problem from a config, execute a mode, persist CSVs and reports."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .acceptance import run_acceptance
from .config import Horizon, ProblemConfig, RunConfig
from .dpp import MCConfig, ProblemSpec, SpaceMesh, compute_value_dpp
from .errors import ConfigError, ReflectCtlError
from .gbsde import BasisSpec, direct_expectation_oracle, solve_gbsde
from .hjb import FdGrid, compare_grids, solve_hjb_fd
from .presets import affine_problem, get_preset, yz_free_parts
from .rsde import ControlPolicy, TimeGrid, k_moment, simulate_paths

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2


@dataclass
class RunReport:
    mode: str
    config: dict
    config_hash: str
    timings: dict = field(default_factory=dict)  # operation -> seconds
    results: dict = field(default_factory=dict)
    error_norms: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    error: dict | None = None  # {"module", "type", "message"}
    exit_code: int = EXIT_OK

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)

    def to_text(self) -> str:
        out = [f"mode: {self.mode}", f"config sha256: {self.config_hash}", f"exit code: {self.exit_code}"]
        if self.error:
            out.append(f"ERROR [{self.error['module']}] {self.error['type']}: {self.error['message']}")
        for title, block in (("timings (s)", self.timings), ("results", self.results),
                             ("error norms", self.error_norms), ("warnings", self.warnings)):
            if block:
                out.append(f"{title}:")
                out.extend(f"  {k}: {_short(v)}" for k, v in block.items())
        if self.checks:
            out.append("acceptance:")
            for c in self.checks:
                status = "PASS" if c["passed"] else "FAIL"
                out.append(f"  [{status}] {c['number']:2d} {c['name']}: value={c['value']:.6g} "
                           f"bound={c['bound']:.6g} runtime={c['runtime']:.1f}s/{c['limit']:.0f}s")
        if self.files:
            out.append("files:")
            out.extend(f"  {f}" for f in self.files)
        return "\n".join(out) + "\n"


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _short(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def resolve_threads(n: int) -> int:
    return max(1, os.cpu_count() or 1) if n == 0 else n


def build_problem(pc: ProblemConfig) -> tuple[ProblemSpec, bool]:
    """ProblemSpec from a preset (with optional control-set/horizon overrides) or inline affine tables."""
    if pc.coefficients is not None:
        c = pc.coefficients
        hz = pc.horizon or Horizon()
        controls = pc.control_set or [[0.0]]
        problem = affine_problem(pc.domain, controls, hz.T, hz.macro_intervals, t0=hz.t0, b=c.b, sigma=c.sigma,
                                 f=c.f, g=c.g, terminal=c.terminal.model_dump(), lipschitz_hint=c.lipschitz_hint)
        fz = np.atleast_1d(c.f.get("z", 0.0))
        yz_free = c.f.get("y", 0.0) == 0 and not np.any(fz) and c.g.get("y", 0.0) == 0
    else:
        preset = get_preset(pc.preset)
        problem, yz_free = preset.problem, preset.yz_free
        if problem.domain.name != pc.domain:
            raise ConfigError(f"preset {pc.preset!r} is defined on {problem.domain.name}, not {pc.domain}")
        controls = pc.control_set or problem.control_set
        horizon = problem.horizon
        if pc.horizon is not None:
            horizon = TimeGrid(pc.horizon.t0, pc.horizon.T, pc.horizon.macro_intervals)
        problem = ProblemSpec(problem.domain, problem.coeffs, problem.cost, tuple(controls), horizon)
    problem.validate()
    return problem, yz_free


def _basis(cfg: RunConfig, dim: int) -> BasisSpec:
    b = cfg.dpp.basis
    default = BasisSpec.default(dim)
    if b.kind == "polynomial":
        return BasisSpec("polynomial", b.degree if b.degree is not None else default.degree)
    return BasisSpec("piecewise_constant", cells=b.cells)


def _policy(cfg: RunConfig, problem: ProblemSpec) -> ControlPolicy:
    pol = cfg.problem.policy
    if pol.kind == "constant":
        return ControlPolicy.constant(problem.control_set, pol.index)
    return ControlPolicy(problem.control_set, "piecewise_constant", macro_indices=tuple(pol.macro_indices))


def _mc(cfg: RunConfig) -> MCConfig:
    m = cfg.mc
    return MCConfig(m.M, m.n_substeps, int(m.seed), m.split_paths, m.implicit)


class _Runner:
    def __init__(self, cfg: RunConfig, out: Path, report: RunReport):
        self.cfg, self.out, self.report = cfg, out, report
        self.threads = resolve_threads(cfg.threads)
        self.write_csv = "csv" in cfg.outputs.formats

    def timed(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        value = fn(*args, **kwargs)
        self.report.timings[name] = time.perf_counter() - start
        return value

    def save(self, name, writer, *args, **kwargs):
        if self.write_csv:
            path = writer(*args, self.out / name, **kwargs)
            self.report.files.append(str(path))

    def save_rows(self, name, header, rows):
        if not self.write_csv:
            return
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r] for r in rows])
        self.report.files.append(str(path))

    # modes ----------------------------------------------------------------------------------

    def _bundle(self, problem):
        hz, mc = problem.horizon, _mc(self.cfg)
        grid = TimeGrid(hz.t0, hz.T, hz.n_steps * mc.n_substeps)
        x0 = problem.domain.centroid if self.cfg.problem.x0 is None else np.asarray(self.cfg.problem.x0, float)
        bundle = self.timed("simulate_paths", simulate_paths, problem.domain, problem.coeffs,
                            _policy(self.cfg, problem), grid, x0, mc.M, mc.seed)
        return bundle

    def simulate(self, problem, yz_free):
        bundle = self._bundle(problem)
        r = self.report.results
        r["M"], r["n_steps"], r["dt"] = bundle.M, bundle.grid.n_steps, bundle.grid.dt
        r["mean_X_T"] = bundle.X[:, -1].mean(axis=0).tolist()
        r["k_moment_p1"] = self.timed("k_moment", k_moment, bundle, 1)
        r["k_moment_p2"] = k_moment(bundle, 2)
        self.save("bundle.csv", io.write_bundle_csv, bundle, max_paths=self.cfg.outputs.max_paths)
        return bundle

    def gbsde(self, problem, yz_free):
        bundle = self.simulate(problem, yz_free)
        mc = _mc(self.cfg)
        sol = self.timed("solve_gbsde", solve_gbsde, bundle, problem.cost, _basis(self.cfg, problem.domain.dim),
                         implicit=mc.implicit, split_paths=mc.split_paths)
        self.report.results["y0"], self.report.results["y0_se"] = sol.y0, sol.y0_se
        if yz_free:
            f0, g0 = yz_free_parts(problem)
            ora = self.timed("direct_expectation_oracle", direct_expectation_oracle, bundle, f0, g0,
                             problem.cost.phi(bundle.X[:, -1]))
            self.report.results["oracle"], self.report.results["oracle_se"] = ora.value, ora.se
            self.report.error_norms["gbsde_vs_oracle_abs"] = abs(sol.y0 - ora.value)
        self.save("solution.csv", io.write_solution_csv, bundle, sol, max_paths=self.cfg.outputs.max_paths)

    def _dpp(self, problem):
        mesh = SpaceMesh.uniform(problem.domain, self.cfg.dpp.mesh_cells)
        grid = self.timed("compute_value_dpp", compute_value_dpp, problem, mesh, _mc(self.cfg),
                          _basis(self.cfg, problem.domain.dim), self.threads)
        self.report.warnings.update(grid.warnings)
        self.report.results["dpp_W_t0_max_se"] = float(np.max(grid.se[0]))
        self.save("value_dpp.csv", io.write_value_grid_csv, grid)
        return grid

    def _fd(self, problem):
        dt = None if self.cfg.fd.dt == "auto" else float(self.cfg.fd.dt)
        fdg = self.timed("FdGrid.build", FdGrid.build, problem, self.cfg.fd.h, dt)
        grid = self.timed("solve_hjb_fd", solve_hjb_fd, problem, fdg)
        self.report.results["fd_dt"], self.report.results["fd_cfl_bound"] = fdg.dt, fdg.cfl_bound
        self.save("value_fd.csv", io.write_value_grid_csv, grid)
        return grid

    def value_dpp(self, problem, yz_free):
        self._dpp(problem)

    def hjb(self, problem, yz_free):
        self._fd(problem)

    def compare(self, problem, yz_free):
        a, b = self._dpp(problem), self._fd(problem)
        cmp = self.timed("compare_grids", compare_grids, a, b)
        self.report.error_norms["compare_max_abs"], self.report.error_norms["compare_l2"] = cmp.max_abs, cmp.l2
        self.save_rows("compare.csv", ["t", "max_abs", "l2"], cmp.per_time)

    def acceptance(self, problem, yz_free):
        checks = self.timed("acceptance", run_acceptance, seed=int(self.cfg.mc.seed), threads=self.threads)
        self.report.checks = [asdict(c) for c in checks]
        self.save_rows("acceptance.csv", ["number", "name", "passed", "value", "bound", "runtime", "limit"],
                       [[c.number, c.name, c.passed, c.value, c.bound, round(c.runtime, 3), c.limit] for c in checks])
        if not all(c.passed for c in checks):
            self.report.exit_code = EXIT_CHECK_FAILED


def _error_module(exc: BaseException) -> str:
    mod = getattr(exc, "module", None)
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        name = Path(frame.filename).stem
        if "reflectctl" in frame.filename and name not in ("harness", "cli"):
            return name if mod in (None, "reflectctl") else mod
    return mod or "harness"


def run(cfg: RunConfig, out_dir=None) -> RunReport:
    """Execute ``cfg.mode``; write CSV artifacts and report files; never raises on solver errors."""
    out = Path(out_dir or cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.mode, cfg.model_dump(mode="json"), config_hash(cfg))
    runner = _Runner(cfg, out, report)
    try:
        if cfg.mode == "acceptance":
            problem, yz_free = None, False
        else:
            problem, yz_free = runner.timed("build_problem", build_problem, cfg.problem)
        getattr(runner, cfg.mode.replace("-", "_"))(problem, yz_free)
    except (ReflectCtlError, ValueError, ArithmeticError, MemoryError) as exc:
        log.error("%s failed: %s", cfg.mode, exc)
        report.error = {"module": _error_module(exc), "type": type(exc).__name__, "message": str(exc)}
        report.exit_code = EXIT_ERROR
    if "json" in cfg.outputs.formats:
        (out / "report.json").write_text(report.to_json())
    if "txt" in cfg.outputs.formats:
        (out / "report.txt").write_text(report.to_text())
    return report
