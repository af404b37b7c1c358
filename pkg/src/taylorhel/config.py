"""Run configuration: a YAML document with domain/numerics/output sections.

Unknown keys are rejected at every level.  All physical parameters are
checked by :meth:`RunConfig.validate` before any computation starts.

Example::

    domain:
      recipe: solid_torus
      dims: 24            # or [nx, ny, nz]
      params: {}          # recipe parameters, e.g. {n: 2} for nfold_torus
    experiment: evolve
    numerics:
      eta: [1.0e-2]
      t_end: 1.0
      initial: {field: linked, velocity: abc, u_amplitude: 0.2}
    output:
      directory: runs/evolve
      cadence: 4
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import RECIPES
from .grid import GridSpec
from .mhd import ConfigError, InitialCondition, SimConfig

EXPERIMENTS = ("verify-identities", "helicity", "evolve", "ideal-limit", "relax", "export-vtk")


@dataclass
class Tolerances:
    solver: float = 1e-12
    picard: float = 1e-14
    relax: float = 1e-6
    conservation: float = 1e-12


@dataclass
class DomainSection:
    recipe: str = "solid_torus"
    dims: int | list = 24
    h: float | None = None  # default: unit length along the largest axis
    params: dict = field(default_factory=dict)

    def grid(self) -> GridSpec:
        n = [self.dims] * 3 if isinstance(self.dims, int) else list(self.dims)
        h = self.h if self.h is not None else 1.0 / max(n)
        return GridSpec(int(n[0]), int(n[1]), int(n[2]), float(h))


@dataclass
class NumericsSection:
    tolerances: Tolerances = field(default_factory=Tolerances)
    dt: float | None = None
    t_end: float = 1.0
    eta: list = field(default_factory=lambda: [1e-2])
    nu: float = 0.0
    seed: int = 7
    mode: str = "kinematic"
    integrator: str = "midpoint"
    initial: InitialCondition = field(default_factory=InitialCondition)
    levels: list = field(default_factory=lambda: [16, 24, 32])
    gauge_samples: int = 100
    max_iter: int = 50_000
    slope_min: float = 0.4


@dataclass
class OutputSection:
    directory: str = "taylorhel_out"
    cadence: int = 1
    snapshot_times: list = field(default_factory=list)


@dataclass
class RunConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    experiment: str = "evolve"
    numerics: NumericsSection = field(default_factory=NumericsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        d, n, o = self.domain, self.numerics, self.output
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if d.recipe not in RECIPES:
            raise ConfigError(f"domain.recipe must be one of {RECIPES}, got {d.recipe!r}")
        dims = [d.dims] * 3 if isinstance(d.dims, int) else d.dims
        if len(dims) != 3 or any(not isinstance(x, int) or x < 6 for x in dims):
            raise ConfigError("domain.dims must be an integer >= 6 or three of them")
        if d.h is not None and not (d.h > 0 and math.isfinite(d.h)):
            raise ConfigError("domain.h must be positive")
        for k, v in dataclasses.asdict(n.tolerances).items():
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"numerics.tolerances.{k} must be positive")
        if not n.eta or any(not (e >= 0 and math.isfinite(e)) for e in n.eta):
            raise ConfigError("numerics.eta must be a non-empty list of finite values >= 0")
        if self.experiment == "ideal-limit":
            if len(n.eta) < 3 or sum(e > 0 for e in n.eta) < 2:
                raise ConfigError("ideal-limit needs at least three resistivities, two of them positive")
        elif self.experiment in ("evolve", "helicity", "relax") and len(n.eta) != 1:
            raise ConfigError(f"{self.experiment} takes a single eta, got {n.eta}")
        if int(n.seed) != n.seed or n.seed < 0:
            raise ConfigError("numerics.seed must be a non-negative integer")
        if not n.levels or any(not isinstance(x, int) or x < 6 for x in n.levels) or len(set(n.levels)) != len(n.levels):
            raise ConfigError("numerics.levels must be distinct integers >= 6")
        if n.gauge_samples < 1 or n.max_iter < 1:
            raise ConfigError("numerics.gauge_samples and numerics.max_iter must be >= 1")
        if o.cadence < 1:
            raise ConfigError("output.cadence must be >= 1")
        if any(not (t >= 0 and math.isfinite(t)) for t in o.snapshot_times):
            raise ConfigError("output.snapshot_times must be finite and >= 0")
        for e in n.eta:
            self.sim_config(e).validate()
        return self

    def sim_config(self, eta: float | None = None) -> SimConfig:
        n = self.numerics
        ic = dataclasses.replace(n.initial, harmonic=tuple(n.initial.harmonic), seed=int(n.seed))
        return SimConfig(
            recipe=self.domain.recipe,
            grid=self.domain.grid(),
            recipe_params=dict(self.domain.params),
            eta=float(n.eta[0] if eta is None else eta),
            nu=float(n.nu),
            dt=n.dt,
            t_end=float(n.t_end),
            mode=n.mode,
            integrator=n.integrator,
            initial=ic,
            cadence=int(self.output.cadence),
            picard_tol=float(n.tolerances.picard),
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["numerics"]["initial"]["harmonic"] = list(self.numerics.initial.harmonic)
        return out


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kw[name] = _build(sub, value, path)
        else:
            kw[name] = _coerce(cls, name, value, path)
    return cls(**kw)


_FLOATS = {"h", "dt", "t_end", "nu", "amplitude", "wavenumber", "u_amplitude", "smoothing", "slope_min",
           "solver", "picard", "relax", "conservation"}


def _coerce(cls, name, value, path):
    # YAML reads "1e-2" as a string; accept the common spellings of numbers
    if name in _FLOATS and value is not None:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path} must be a number, got {value!r}") from None
    if name in ("eta", "snapshot_times", "harmonic"):
        vals = value if isinstance(value, (list, tuple)) else [value]
        try:
            return [float(v) for v in vals]
        except (TypeError, ValueError):
            raise ConfigError(f"{path} must be a list of numbers") from None
    if name == "params" and not isinstance(value, dict):
        raise ConfigError(f"{path} must be a mapping")
    return value


_NESTED = {
    (RunConfig, "domain"): DomainSection,
    (RunConfig, "numerics"): NumericsSection,
    (RunConfig, "output"): OutputSection,
    (NumericsSection, "tolerances"): Tolerances,
    (NumericsSection, "initial"): InitialCondition,
}


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    cfg.numerics.initial.harmonic = tuple(cfg.numerics.initial.harmonic)
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data or {})
