"""Run configuration: a YAML file of nested sections, strictly validated.

Unknown keys are errors (so a typo such as ``sigm`` never silently falls back
to a default). Every error names the offending field and, when known, the
line it came from. ``RunConfig.to_dict`` gives the fully resolved config,
which loads back to an equal ``RunConfig``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import yaml

from ._common import E_MAX
from ._io import atomic_writer
from .errors import ConfigError, InvalidConfigError
from .model_sim import MarketConfig

OUT_ENV = "EXPLORE_STOP_OUT"
DEFAULT_OUT = "runs"


def _key_lines(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            name = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[name] = k.start_mark.line + 1
            _key_lines(v, name, out)
    return out


def read_yaml(path, with_lines: bool = False):
    """Parse a YAML file; parse errors carry the 1-based line number."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text)) if with_lines else None
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"{path}:{line}: {exc.problem}", line=line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    data = {} if data is None else data
    return (data, lines) if with_lines else data


@dataclass(frozen=True)
class PdeSection:
    n_steps: int = 200
    dx: float = 0.01
    x_halfwidth: float = 3.0

    @property
    def half_nodes(self) -> int:
        return int(round(self.x_halfwidth / self.dx))


@dataclass(frozen=True)
class SolverSection:
    lam: float = 0.005
    tol: float = 1e-8
    max_newton: int = 50
    penalty: float = 1e6
    e_max: float = E_MAX
    classical: bool = True
    tol_boundary: float = 1e-6


@dataclass(frozen=True)
class PolicyIterSection:
    iters: int = 15
    tol: float = 0.0


@dataclass(frozen=True)
class TrainingSection:
    steps: int = 50
    iterations: int = 3000
    batch_size: int = 1024
    lr: float = 3e-3
    lr_final: float = 1e-4
    lam: float = 1e-4
    optimizer: str = "adam"
    clip_norm: float = 10.0
    eval_every: int = 100
    test_paths: int = 65536
    stopgrad_policy: bool = True
    positive_only: bool = False
    zero_output: bool = True
    reference: float | None = None


@dataclass(frozen=True)
class EvaluationSection:
    modes: tuple = ("threshold", "randomized", "cox")
    test_paths: int = 65536
    steps: int = 50
    lam: float | None = None
    include_entropy: bool = False
    hazard_rule: str = "exact"
    checkpoint: str | None = None
    reference: float | None = None


@dataclass(frozen=True)
class SimSection:
    n_paths: int = 16
    steps: int = 50


@dataclass(frozen=True)
class TableSection:
    rows: tuple = ()


SECTIONS = {
    "pde": PdeSection,
    "solver": SolverSection,
    "policy_iter": PolicyIterSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
    "sim": SimSection,
    "table": TableSection,
}

_POSITIVE = {
    "pde": ("n_steps", "dx", "x_halfwidth"),
    "solver": ("lam", "tol", "max_newton", "penalty", "e_max", "tol_boundary"),
    "policy_iter": ("iters",),
    "training": ("steps", "iterations", "batch_size", "lr", "lr_final", "lam", "clip_norm",
                 "eval_every", "test_paths"),
    "evaluation": ("test_paths", "steps"),
    "sim": ("n_paths", "steps"),
}


@dataclass(frozen=True)
class RunConfig:
    market: MarketConfig | None = None
    pde: PdeSection = field(default_factory=PdeSection)
    solver: SolverSection = field(default_factory=SolverSection)
    policy_iter: PolicyIterSection = field(default_factory=PolicyIterSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    sim: SimSection = field(default_factory=SimSection)
    table: TableSection = field(default_factory=TableSection)
    out: str | None = None
    seed: int = 0
    deterministic: bool = True

    def to_dict(self) -> dict:
        out = {"market": self.market.to_dict() if self.market else None}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        out["out"] = self.out
        out["seed"] = self.seed
        out["deterministic"] = self.deterministic
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_section(self, name: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **changes)})

    def output_dir(self) -> str:
        return self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT

    def require_market(self) -> MarketConfig:
        if self.market is None:
            raise ConfigError("this command needs a 'market' section", field="market")
        return self.market


def _fail(msg: str, name: str, lines: dict | None):
    line = (lines or {}).get(name)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{name}: {msg}", line=line, field=name)


def _coerce(value, default, name, lines):
    """Convert YAML scalars to the type of the default (ints stay exact, tuples from lists)."""
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            _fail(f"expected true/false, got {value!r}", name, lines)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            _fail(f"expected an integer, got {value!r}", name, lines)
        return value
    if isinstance(default, float) or default is None and isinstance(value, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            _fail(f"expected a number, got {value!r}", name, lines)
        try:
            return float(value)
        except ValueError:
            _fail(f"expected a number, got {value!r}", name, lines)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            _fail(f"expected a list, got {value!r}", name, lines)
        return tuple(value)
    return value


def _section(cls, raw, prefix: str, lines):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        _fail("expected a mapping", prefix, lines)
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, value in raw.items():
        name = f"{prefix}.{key}"
        if key not in known:
            _fail(f"unknown key {key!r} (expected one of {sorted(known)})", name, lines)
        f = known[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        kw[key] = _coerce(value, default, name, lines)
    sec = cls(**kw)
    for key in _POSITIVE.get(prefix, ()):
        v = getattr(sec, key)
        if v is not None and not v > 0:
            _fail(f"must be > 0, got {v!r}", f"{prefix}.{key}", lines)
    return sec


def _validate(cfg: RunConfig, lines) -> None:
    ev = cfg.evaluation
    if ev.lam is not None and not ev.lam > 0:
        _fail(f"must be > 0, got {ev.lam!r}", "evaluation.lam", lines)
    bad = [m for m in ev.modes if m not in ("threshold", "randomized", "cox")]
    if bad:
        _fail(f"unknown modes {bad}", "evaluation.modes", lines)
    if ev.hazard_rule not in ("exact", "linear"):
        _fail(f"expected 'exact' or 'linear', got {ev.hazard_rule!r}", "evaluation.hazard_rule", lines)
    if cfg.training.optimizer not in ("adam", "sgd"):
        _fail(f"expected 'adam' or 'sgd', got {cfg.training.optimizer!r}", "training.optimizer", lines)
    if not cfg.training.lr_final <= cfg.training.lr:
        _fail("must not exceed training.lr", "training.lr_final", lines)
    for i, row in enumerate(cfg.table.rows):
        if not isinstance(row, dict):
            _fail(f"row {i} must be a mapping", "table.rows", lines)


def config_from_dict(data: dict, lines: dict | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    top = {"market", "out", "seed", "deterministic", *SECTIONS}
    for key in data:
        if key not in top:
            _fail(f"unknown section {key!r} (expected one of {sorted(top)})", str(key), lines)
    market = None
    if data.get("market") is not None:
        raw = data["market"]
        if not isinstance(raw, dict):
            _fail("expected a mapping", "market", lines)
        known = {f.name for f in fields(MarketConfig)}
        for key in raw:
            if key not in known:
                _fail(f"unknown key {key!r} (expected one of {sorted(known)})", f"market.{key}", lines)
        try:
            market = MarketConfig.from_dict(raw)
        except InvalidConfigError as exc:
            _fail(str(exc), "market", lines)
    kw = {name: _section(cls, data.get(name), name, lines) for name, cls in SECTIONS.items()}
    seed = _coerce(data.get("seed", 0), 0, "seed", lines)
    det = _coerce(data.get("deterministic", True), True, "deterministic", lines)
    out = data.get("out")
    cfg = RunConfig(market=market, out=None if out is None else str(out), seed=seed,
                    deterministic=det, **kw)
    _validate(cfg, lines)
    return cfg


def load_config(path) -> RunConfig:
    """Parse, validate and default-fill a run config file."""
    data, lines = read_yaml(path, with_lines=True)
    return config_from_dict(data, lines)


def dump_config(cfg: RunConfig, path) -> None:
    """Write the resolved config (atomically); :func:`load_config` reads it back unchanged."""
    with atomic_writer(path) as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False, default_flow_style=None)
