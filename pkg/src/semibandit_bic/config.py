"""Experiment configuration schema (pydantic, unknown keys rejected)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class JointCfg(_Strict):
    pairs: list[tuple[tuple[float, float], float]]
    sizes: tuple[int, int] = (1, 1)


class PriorCfg(_Strict):
    """Either per-atom specs, a list of Beta parameters, or a two-arm joint prior."""

    atoms: Optional[list[dict[str, Any]]] = None
    beta: Optional[list[tuple[float, float]]] = None
    joint: Optional[JointCfg] = None

    @model_validator(mode="after")
    def _one_kind(self):
        given = [x is not None for x in (self.atoms, self.beta, self.joint)]
        if sum(given) != 1:
            raise ValueError("prior needs exactly one of 'atoms', 'beta', 'joint'")
        return self


class FamilyCfg(_Strict):
    kind: Literal["explicit", "m_subsets", "singletons", "dag"]
    d: Optional[int] = None
    m: Optional[int] = None
    arms: Optional[list[list[int]]] = None
    graph: Optional[dict[str, Any]] = None

    def to_spec(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class BootstrapCfg(_Strict):
    kind: Literal["exogenous", "hidden-exploration", "hidden-hallucination"] = "exogenous"
    n: Optional[int] = Field(default=None, ge=0)  # exogenous samples; None = n_ts
    N: Optional[int] = Field(default=None, ge=1)  # hidden exploration N; None = n_P
    L: Optional[int] = Field(default=None, ge=1)
    n_repeats: Optional[int] = Field(default=None, ge=1)  # hallucination repeats; None = n_ts


class AlgorithmCfg(_Strict):
    kind: Literal["ts", "composite", "hidden-exploration", "hidden-hallucination",
                  "uniform-baseline", "two-arm-correlated"] = "ts"
    bootstrap: Optional[BootstrapCfg] = None
    N: Optional[int] = Field(default=None, ge=1)
    L: Optional[int] = Field(default=None, ge=1)
    variant: Literal["auto", "FixedSize", "General"] = "auto"


class ConstantsCfg(_Strict):
    kinds: list[Literal["ts", "property_p", "hh"]] = ["ts", "property_p", "hh"]
    variant: Literal["auto", "FixedSize", "General"] = "auto"
    corollary: Optional[dict[str, float]] = None  # {"c0":..,"c":..,"c_prime":..}


class VerifyCfg(_Strict):
    rounds: list[int] = []
    relative_to_T0: bool = True
    replicates: int = Field(default=10_000, ge=1000)
    mc: bool = True
    exact: bool = False
    property_p: bool = False
    property_p_replicates: int = Field(default=10_000, ge=100)


class SweepCfg(_Strict):
    command: Literal["constants", "run"] = "constants"
    grid: dict[str, list[Any]]


class ExperimentConfig(_Strict):
    prior: PriorCfg
    family: Optional[FamilyCfg] = None
    algorithm: AlgorithmCfg = AlgorithmCfg()
    horizon: int = Field(default=100, ge=0)
    replicates: int = Field(default=100, ge=1)
    seed: int = 0
    out: Optional[str] = None
    c_ts: float = Field(default=1.0, gt=0)
    c1: float = Field(default=1.0, gt=0)
    c2: float = Field(default=1.0, gt=0)
    delta: float = Field(default=0.1, gt=0, le=1)
    n_ph: Optional[int] = Field(default=None, ge=1)
    mc_samples: int = Field(default=100_000, ge=1000)
    tau: float = 0.5
    alpha_exponent: float = 1.0
    budget: int = Field(default=10**7, ge=1)
    max_log_rounds: int = Field(default=10**6, ge=1)
    chunk: int = Field(default=20_000, ge=1)
    canonicalize: bool = True
    constants: ConstantsCfg = ConstantsCfg()
    verify: VerifyCfg = VerifyCfg()
    sweep: Optional[SweepCfg] = None

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    @model_validator(mode="after")
    def _family_needed(self):
        if self.family is None and self.prior.joint is None:
            raise ValueError("family is required unless the prior is a two-arm joint prior")
        return self


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(obj: Union[dict, str, Path]) -> ExperimentConfig:
    """Validate a config dict or JSON file; raises ConfigError naming bad fields."""
    if isinstance(obj, (str, Path)):
        path = Path(obj)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(obj)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


def resolved(cfg: ExperimentConfig) -> dict:
    """Config with every default materialised (JSON-ready)."""
    return cfg.model_dump(mode="json")


def set_dotted(obj: dict, path: str, value) -> dict:
    """Return a deep copy of ``obj`` with ``path`` (a.b.c) set to ``value``."""
    out = json.loads(json.dumps(obj))
    cur = out
    keys = path.split(".")
    for k in keys[:-1]:
        if isinstance(cur, list):
            cur = cur[int(k)]
        else:
            cur = cur.setdefault(k, {})
    if isinstance(cur, list):
        cur[int(keys[-1])] = value
    else:
        cur[keys[-1]] = value
    return out
