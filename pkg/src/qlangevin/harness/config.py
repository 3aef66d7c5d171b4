"""Experiment configuration: one YAML document per experiment.

Schema (every section optional except ``potential``, ``constants`` and ``domain``)::

    potential:  {name: double_well, params: {d: 1}}
    constants:  {L: 17.75 | fit, m: 1, b: 1 | fit, G: 0 | fit, beta: 1,
                 c_lsi: 0.39 | measure, rho: 0.53 | measure}
    domain:     {d: 1, R: 2.5 | auto, n: 33}
    chain:      {eta: 0.01, lazy: true}
    schedule:   {epsilon: 0.5, alpha_scale: 0.2}
    backend:    {name: mala | ula | sula, batch: 1, c_proj: 10}
    run:        {seed: 0, shots: 1000, epsilon: 0.05, time_budget: 60,
                 command: sample | anneal | partition | bench | chains | certify | walk-spectrum}
    output:     {dir: out}

``run.command`` names the subcommand whose runtime ``time_budget`` bounds.
Unknown keys are errors. Diagnostics name the offending field and its line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .. import chains, domain as dm, potential as pot
from ..errors import ConfigError

RUN_COMMANDS = ("sample", "anneal", "partition", "bench", "chains", "certify", "walk-spectrum")

@dataclass(frozen=True)
class PotentialSection:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConstantsSection:
    L: Union[float, str]
    m: float
    b: Union[float, str]
    G: Union[float, str]
    beta: float = 1.0
    c_lsi: Union[float, str, None] = None
    rho: Union[float, str, None] = None


@dataclass(frozen=True)
class DomainSection:
    d: int
    R: Union[float, str]
    n: int


@dataclass(frozen=True)
class ChainSection:
    eta: float = 0.01
    lazy: bool = True


@dataclass(frozen=True)
class ScheduleSection:
    epsilon: float = 0.5
    alpha_scale: float = 0.2


@dataclass(frozen=True)
class BackendSection:
    name: str = "mala"
    batch: int = 1
    c_proj: float = 10.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    shots: int = 1000
    epsilon: float = 0.05
    time_budget: Optional[float] = None
    command: str = "sample"


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    potential: PotentialSection
    constants: ConstantsSection
    domain: DomainSection
    chain: ChainSection = ChainSection()
    schedule: ScheduleSection = ScheduleSection()
    backend: BackendSection = BackendSection()
    run: RunSection = RunSection()
    output: OutputSection = OutputSection()
    source: Optional[str] = None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Lines:
    """Map dotted field paths to 1-based source lines."""

    def __init__(self, text: str):
        self.lines: dict[str, int] = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}.{key.value}" if prefix else str(key.value)
                self.lines[path] = key.start_mark.line + 1
                self._walk(value, path)

    def where(self, path: str) -> str:
        parts = path.split(".")
        while parts:
            line = self.lines.get(".".join(parts))
            if line is not None:
                return f"line {line}: "
            parts.pop()
        return ""


class _Parser:
    def __init__(self, lines: _Lines):
        self.lines = lines

    def fail(self, path: str, msg: str):
        raise ConfigError(f"{self.lines.where(path)}{path}: {msg}")

    def section(self, data: dict, name: str, allowed: set, required: bool = False) -> dict:
        if name not in data:
            if required:
                self.fail(name, "section is required")
            return {}
        sec = data[name]
        if not isinstance(sec, dict):
            self.fail(name, "expected a mapping")
        for key in sec:
            if key not in allowed:
                self.fail(f"{name}.{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return sec

    def number(self, sec, path, key, default=None, low=None, high=None, strict_low=True, words=(),
               required=False):
        full = f"{path}.{key}"
        if key not in sec:
            if required:
                self.fail(full, "is required")
            return default
        v = sec[key]
        if isinstance(v, str) and v in words:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            alt = " or " + " / ".join(repr(w) for w in words) if words else ""
            self.fail(full, f"expected a finite number{alt}, got {v!r}")
        if low is not None and (v <= low if strict_low else v < low):
            self.fail(full, f"must be {'>' if strict_low else '>='} {low}, got {v}")
        if high is not None and v >= high:
            self.fail(full, f"must be < {high}, got {v}")
        return float(v)

    def integer(self, sec, path, key, default=None, low=None):
        full = f"{path}.{key}"
        if key not in sec:
            if default is None:
                self.fail(full, "is required")
            return default
        v = sec[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(full, f"expected an integer, got {v!r}")
        if low is not None and v < low:
            self.fail(full, f"must be >= {low}, got {v}")
        return int(v)


def parse_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    """Parse a YAML document into an :class:`ExperimentConfig`.

    Raises:
        ConfigError: With the field path and source line of the first problem.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    p = _Parser(_Lines(text))
    sections = {"potential", "constants", "domain", "chain", "schedule", "backend", "run", "output"}
    for key in data:
        if key not in sections:
            p.fail(str(key), f"unknown section (allowed: {', '.join(sorted(sections))})")

    s = p.section(data, "potential", {"name", "params"}, required=True)
    if not isinstance(s.get("name"), str) or s["name"] not in pot.CATALOG:
        p.fail("potential.name", f"expected one of {sorted(pot.CATALOG)}, got {s.get('name')!r}")
    params = s.get("params", {}) or {}
    if not isinstance(params, dict):
        p.fail("potential.params", "expected a mapping")
    if "beta" in params:
        p.fail("potential.params.beta", "set beta under constants")
    potential = PotentialSection(s["name"], dict(params))

    s = p.section(data, "constants", {"L", "m", "b", "G", "beta", "c_lsi", "rho"}, required=True)
    constants = ConstantsSection(
        L=p.number(s, "constants", "L", low=0, words=("fit",), required=True),
        m=p.number(s, "constants", "m", low=0, required=True),
        b=p.number(s, "constants", "b", default=0.0, low=0, strict_low=False, words=("fit",)),
        G=p.number(s, "constants", "G", default=0.0, low=0, strict_low=False, words=("fit",)),
        beta=p.number(s, "constants", "beta", default=1.0, low=0),
        c_lsi=p.number(s, "constants", "c_lsi", low=0, words=("measure",)),
        rho=p.number(s, "constants", "rho", low=0, words=("measure",)),
    )

    s = p.section(data, "domain", {"d", "R", "n"}, required=True)
    d = p.integer(s, "domain", "d")
    if d not in (1, 2):
        p.fail("domain.d", f"only 1 and 2 are supported, got {d}")
    R = p.number(s, "domain", "R", low=0, words=("auto",), required=True)
    domain = DomainSection(d, R, p.integer(s, "domain", "n", low=2))

    s = p.section(data, "chain", {"eta", "lazy"})
    lazy = s.get("lazy", True)
    if not isinstance(lazy, bool):
        p.fail("chain.lazy", f"expected true or false, got {lazy!r}")
    chain = ChainSection(p.number(s, "chain", "eta", default=0.01, low=0), lazy)

    s = p.section(data, "schedule", {"epsilon", "alpha_scale"})
    schedule = ScheduleSection(
        p.number(s, "schedule", "epsilon", default=0.5, low=0, high=1),
        p.number(s, "schedule", "alpha_scale", default=0.2, low=0),
    )

    s = p.section(data, "backend", {"name", "batch", "c_proj"})
    name = s.get("name", "mala")
    if name not in ("mala", "ula", "sula"):
        p.fail("backend.name", f"expected mala, ula or sula, got {name!r}")
    backend = BackendSection(name, p.integer(s, "backend", "batch", default=1, low=1),
                             p.number(s, "backend", "c_proj", default=10.0, low=0))

    s = p.section(data, "run", {"seed", "shots", "epsilon", "time_budget", "command"})
    command = s.get("command", "sample")
    if command not in RUN_COMMANDS:
        p.fail("run.command", f"expected one of {', '.join(RUN_COMMANDS)}, got {command!r}")
    run = RunSection(
        p.integer(s, "run", "seed", default=0, low=0),
        p.integer(s, "run", "shots", default=1000, low=1),
        p.number(s, "run", "epsilon", default=0.05, low=0, high=1),
        p.number(s, "run", "time_budget", low=0),
        command,
    )

    s = p.section(data, "output", {"dir"})
    out = s.get("dir", "out")
    if not isinstance(out, str):
        p.fail("output.dir", f"expected a path string, got {out!r}")

    cfg = ExperimentConfig(potential, constants, domain, chain, schedule, backend, run, OutputSection(out), source)
    try:
        build_potential(cfg)
    except (TypeError, ValueError) as exc:
        p.fail("potential.params", str(exc))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# Materialisation
# ---------------------------------------------------------------------------


def build_potential(cfg: ExperimentConfig) -> pot.PotentialSpec:
    spec = pot.from_catalog(cfg.potential.name, beta=cfg.constants.beta, **cfg.potential.params)
    if spec.d != cfg.domain.d:
        raise ConfigError(f"domain.d: potential has dimension {spec.d}, domain has {cfg.domain.d}")
    return spec


@dataclass(frozen=True)
class Experiment:
    """Objects built from a config: potential, grid and resolved constants."""

    config: ExperimentConfig
    spec: pot.PotentialSpec
    domain: dm.GridDomain
    constants: pot.AssumptionConstants


def _needs_fit(c: ConstantsSection) -> bool:
    return any(v == "fit" for v in (c.L, c.b, c.G))


def materialise(cfg: ExperimentConfig, landscape: bool = True) -> Experiment:
    """Build the potential and grid and resolve ``fit``/``measure``/``auto`` entries.

    ``R: auto`` needs numeric ``L`` and uses the truncation radius at
    ``run.epsilon``. ``fit`` replaces ``L``, ``b`` and ``G`` by their tightest
    grid values for the given ``m``; explicit numbers take precedence. With
    ``landscape=True`` the ``measure`` entries are computed from the MALA kernel
    at ``chain.eta``.
    """
    c = cfg.constants
    spec = build_potential(cfg)
    R = cfg.domain.R
    if R == "auto":
        if c.L == "fit":
            raise ConfigError("domain.R: 'auto' needs a numeric constants.L")
        R = dm.truncation_radius(cfg.run.epsilon, spec.d, c.m, spec.beta, c.L)
    grid = dm.build_grid(spec.d, R, cfg.domain.n)
    numeric = {k: getattr(c, k) for k in ("L", "b", "G")}
    if _needs_fit(c):
        fitted = pot.fit_constants(spec, grid.nodes, m=c.m)
        numeric = {k: (getattr(fitted, k) if v == "fit" else v) for k, v in numeric.items()}
    constants = pot.AssumptionConstants(L=numeric["L"], m=c.m, b=numeric["b"], G=numeric["G"])
    fixed = {k: getattr(c, k) for k in ("c_lsi", "rho") if isinstance(getattr(c, k), float)}
    constants = constants.with_landscape(**fixed)
    if landscape and "measure" in (c.c_lsi, c.rho):
        measured = chains.measure_landscape(spec, constants, grid, cfg.chain.eta)
        constants = constants.with_landscape(
            c_lsi=measured.c_lsi if c.c_lsi == "measure" else constants.c_lsi,
            rho=measured.rho if c.rho == "measure" else constants.rho,
        )
    return Experiment(cfg, spec, grid, constants)
