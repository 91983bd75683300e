from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from reflectctl.cli import main
from reflectctl.config import config_schema, load_config, parse_config
from reflectctl.domain import interval01
from reflectctl.errors import ConfigError
from reflectctl.harness import build_problem, run
from reflectctl.io import read_value_grid_csv

ROOT = Path(__file__).resolve().parents[1]


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return path


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, {"mode": "simulate", "problem": {"domain": "interval01"}, "mc": {"seed": 1}}))
    assert cfg.mc.M == 10_000 and cfg.mc.n_substeps == 100
    assert cfg.fd.dt == "auto" and cfg.threads == 0
    assert cfg.outputs.formats == ["csv", "json", "txt"]


def test_missing_seed_named(tmp_path):
    with pytest.raises(ConfigError, match=r"mc\.seed"):
        load_config(_write(tmp_path, {"mode": "gbsde"}))


def test_seed_not_needed_for_hjb():
    assert parse_config({"mode": "hjb"}).mc.seed is None


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="mcc"):
        load_config(_write(tmp_path, {"mode": "simulate", "mcc": {"seed": 1}}))
    with pytest.raises(ConfigError, match=r"mc\.sead"):
        parse_config({"mode": "simulate", "mc": {"sead": 1}})


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError, match=r"line 3, column"):
        load_config(_write(tmp_path, '{\n  "mode": "simulate",\n  "mc": {seed: 1}\n}'))


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.json")


def test_published_schema_is_current():
    published = json.loads((ROOT / "config.schema.json").read_text())
    assert published == config_schema()


@pytest.mark.parametrize("name", ["simulate.json", "compare-zero-cost.json", "hjb-controlled-drift.json",
                                  "acceptance.json"])
def test_shipped_configs_validate(name):
    load_config(ROOT / "configs" / name)


def test_inline_coefficients():
    cfg = parse_config({"mode": "hjb", "problem": {
        "coefficients": {"b": {"const": [0.2]}, "sigma": {"const": [[0.5]]}, "f": {"const": 1.0}},
        "horizon": {"T": 0.5, "macro_intervals": 2}}})
    problem, yz_free = build_problem(cfg.problem)
    assert yz_free and problem.horizon.T == 0.5
    with pytest.raises(ConfigError):
        parse_config({"problem": {"preset": "zero-cost", "coefficients": {}}, "mc": {"seed": 1}})


def test_compare_zero_cost(tmp_path):
    cfg = parse_config({"mode": "compare", "problem": {"preset": "zero-cost"},
                        "mc": {"M": 200, "n_substeps": 10, "seed": 1}, "dpp": {"mesh_cells": 10},
                        "fd": {"h": 0.05}})
    report = run(cfg, tmp_path)
    assert report.exit_code == 0
    assert report.error_norms["compare_max_abs"] <= 1e-8
    assert {"value_dpp.csv", "value_fd.csv", "compare.csv", "report.json", "report.txt"} <= \
        {p.name for p in tmp_path.iterdir()}
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["config_hash"] == report.config_hash


def test_cfl_violation_reported(tmp_path):
    cfg = parse_config({"mode": "hjb", "problem": {"preset": "heat-neumann"}, "fd": {"h": 0.02, "dt": 0.01}})
    report = run(cfg, tmp_path)
    assert report.exit_code == 2
    assert report.error["type"] == "CFLError" and report.error["module"] == "hjb_pde"
    assert "CFL" in (tmp_path / "report.txt").read_text()


def test_reproducible_csvs(tmp_path):
    data = {"mode": "gbsde", "problem": {"preset": "controlled-drift", "x0": [0.3]},
            "mc": {"M": 300, "n_substeps": 10, "seed": 4}, "outputs": {"max_paths": 3}}
    a = run(parse_config(data), tmp_path / "a")
    b = run(parse_config(data), tmp_path / "b")
    assert a.exit_code == b.exit_code == 0
    for name in ("bundle.csv", "solution.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "bundle.csv").read_text().splitlines()[0]
    assert header == "path,step,t,x_1,dK"
    assert (tmp_path / "a" / "solution.csv").read_text().startswith("path,step,t,Y,Z_1\n")


def test_value_grid_round_trip(tmp_path):
    cfg = parse_config({"mode": "value-dpp", "problem": {"preset": "controlled-drift"},
                        "mc": {"M": 200, "n_substeps": 5, "seed": 2}, "dpp": {"mesh_cells": 6}})
    run(cfg, tmp_path)
    grid = read_value_grid_csv(tmp_path / "value_dpp.csv", interval01())
    assert grid.provenance == "dpp" and grid.W.shape == (3, 7)
    np.testing.assert_array_equal(grid.W[-1], np.sin(np.pi * grid.mesh.nodes[:, 0]))
    assert (tmp_path / "value_dpp.csv").read_text().startswith("provenance,t,x_1,W,se\n")


def test_cli_overrides(tmp_path, capsys):
    cfg = _write(tmp_path, {"mode": "simulate", "problem": {"preset": "heat-neumann"},
                            "mc": {"M": 50, "n_substeps": 5, "seed": 1}})
    code = main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--mode", "gbsde", "--seed", "9",
                 "--split-paths", "--threads", "1"])
    assert code == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["mode"] == "gbsde"
    assert report["config"]["mc"]["seed"] == 9 and report["config"]["mc"]["split_paths"]
    assert "y0" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, {"mode": "simulate", "mcc": 1})
    assert main(["--config", str(cfg)]) == 2
    assert "mcc" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, {"mode": "hjb", "problem": {"preset": "zero-cost"}, "fd": {"h": 0.1},
                            "outputs": {"directory": str(tmp_path / "o"), "formats": ["json"]}})
    proc = subprocess.run([sys.executable, "-m", "reflectctl", "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "report.json").exists() and not (tmp_path / "o" / "value_fd.csv").exists()


def test_acceptance_mode_single_check(tmp_path, monkeypatch):
    import reflectctl.harness as harness

    monkeypatch.setattr(harness, "run_acceptance", lambda seed, threads: harness_checks(seed, threads))
    report = run(parse_config({"mode": "acceptance", "mc": {"seed": 1}}), tmp_path)
    assert report.exit_code == 0 and len(report.checks) == 1
    assert "[PASS]" in (tmp_path / "report.txt").read_text()


def harness_checks(seed, threads):
    from reflectctl.acceptance import run_acceptance

    return run_acceptance(seed=seed, threads=threads, only=[1])
