"""JSON run configuration, validated with pydantic (unknown keys rejected)."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

Mode = Literal["simulate", "gbsde", "value-dpp", "hjb", "compare", "acceptance"]
MC_MODES = {"simulate", "gbsde", "value-dpp", "compare", "acceptance"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Terminal(_Strict):
    kind: Literal["const", "linear", "cos_pi", "sin_pi"] = "const"
    coef: Union[float, list[float]] = 0.0


class InlineCoefficients(_Strict):
    """Affine tables; see :func:`reflectctl.presets.affine_problem`."""

    b: dict[str, Union[list[float], list[list[float]]]] = Field(default_factory=dict)
    sigma: dict[str, Union[list[list[float]], list[list[list[float]]]]] = Field(default_factory=dict)
    f: dict[str, Union[float, list[float]]] = Field(default_factory=dict)
    g: dict[str, float] = Field(default_factory=dict)
    terminal: Terminal = Field(default_factory=Terminal)
    lipschitz_hint: float = 1.0


class Horizon(_Strict):
    t0: float = 0.0
    T: float = 1.0
    macro_intervals: int = Field(1, ge=1)


class PolicyConfig(_Strict):
    kind: Literal["constant", "piecewise_constant"] = "constant"
    index: int = 0
    macro_indices: list[int] = Field(default_factory=list)


class ProblemConfig(_Strict):
    domain: Literal["interval01", "disk2"] = "interval01"
    preset: Optional[str] = "heat-neumann"
    coefficients: Optional[InlineCoefficients] = None
    control_set: Optional[list[list[float]]] = None
    horizon: Optional[Horizon] = None
    x0: Optional[list[float]] = None
    policy: PolicyConfig = Field(default_factory=PolicyConfig)


class MCSection(_Strict):
    M: int = Field(10_000, ge=1)
    n_substeps: int = Field(100, ge=1)
    seed: Optional[int] = None
    split_paths: bool = False
    implicit: bool = False


class BasisConfig(_Strict):
    kind: Literal["polynomial", "piecewise_constant"] = "polynomial"
    degree: Optional[int] = None
    cells: int = 10


class DPPSection(_Strict):
    mesh_cells: int = Field(10, ge=2)
    basis: BasisConfig = Field(default_factory=BasisConfig)
    split_intervals: int = Field(2, ge=1)  # alternative macro grid for the consistency check


class FDSection(_Strict):
    h: float = Field(0.02, gt=0)
    dt: Union[Literal["auto"], float] = "auto"


class Outputs(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "json", "txt"]] = Field(default_factory=lambda: ["csv", "json", "txt"])
    max_paths: int = Field(100, ge=1)  # paths written to bundle/solution CSVs


class RunConfig(_Strict):
    mode: Mode = "simulate"
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    mc: MCSection = Field(default_factory=MCSection)
    dpp: DPPSection = Field(default_factory=DPPSection)
    fd: FDSection = Field(default_factory=FDSection)
    outputs: Outputs = Field(default_factory=Outputs)
    threads: int = Field(0, ge=0)

    @field_validator("problem")
    @classmethod
    def _preset_or_inline(cls, v: ProblemConfig):
        if v.coefficients is not None and v.preset is not None and "preset" in v.model_fields_set:
            raise ValueError("give either problem.preset or problem.coefficients, not both")
        return v


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"])


def parse_config(data: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        errs = exc.errors()
        first = errs[0]
        if first["type"] == "extra_forbidden":
            raise ConfigError(f"unknown key {_loc(first)!r}") from None
        raise ConfigError(f"invalid value at {_loc(first)!r}: {first['msg']}") from None
    if cfg.mode in MC_MODES and cfg.mc.seed is None:
        raise ConfigError(f"mc.seed is required in mode {cfg.mode!r}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(data)


def config_schema() -> dict:
    return RunConfig.model_json_schema()
