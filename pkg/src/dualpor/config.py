"""Scenario configuration: INI text with dotted section names, SI units throughout."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .petrophysics import CurvePair, MediumCurves, curve_violations

DEFAULT_INI = """\
# Default scenario.  Units are SI; saturations are dimensionless.

[curves.fracture]
exponent_w = 2.0
exponent_n = 2.0
mu_w = 1.0          # Pa s (normalized)
mu_n = 1.0
entry_pressure = 1.0  # Pa, P_c(0)
shape = 0.0         # P_c(s) = entry_pressure * (1 - s) * (1 + shape * s)
porosity = 0.2

[curves.matrix]
exponent_w = 2.0
exponent_n = 2.0
mu_w = 1.0
mu_n = 1.0
entry_pressure = 1.0
shape = 0.5
porosity = 0.3

[cell]
shape = centered-box  # centered-box | horizontal-slab | custom
side = 0.5
thickness = 0.5
mask_file =
n = 16
d = 2
perm_fracture = 1.0   # m^2, isotropic
perm_matrix = 1.0     # m^2, before the epsilon^theta scaling
method = fe           # fe | tpfa

[macro.grid]
cells = 64            # "64" for 1D, "32,32" for 2D
lengths = 1.0         # m
dirichlet = xmax      # sides of Gamma_1; every other side is no-flow
gravity = 0.0         # m/s^2 per axis, already multiplied by the density contrast

[regime]
theta = 2.0
coupling = true

[time]
t_end = 2.0           # s
dt_init = 0.01
dt_max = 0.01

[sources]
injection_region = 0.0, 0.0625   # x-interval (m)
injection_rate = 1.0             # 1/s
production_region = 0.46875, 0.53125
production_rate = 1.0
injection_s_w = 1.0
t_on = 0.0
t_off = inf

[boundary]
p_dirichlet = 0.0     # Pa
s_dirichlet = 1.0

[initial]
s_fracture = 0.2
s_block =             # empty: capillary equilibrium with the fracture

[blocks]
substeps = 1

[micro]
epsilon = 0.125
resolution = 8
layout = strip        # strip | square
t_end = 0.2
dt = 0.001
s_dirichlet = 0.8

[convergence]
epsilons = 0.125, 0.0625, 0.03125
macro_cells = 256
t_end = 0.2
dt = 0.001
s_fracture = 0.2
s_dirichlet = 0.8
resolution = 8
method = tpfa

[block_demo]
s0 = 0.0
trace = 0.0:1.0       # t:value pairs, piecewise constant
dt = 0.01
t_end = 0.5

[output]
snapshot_every = 50
write_correctors = true
"""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MediumConfig:
    exponent_w: float = 2.0
    exponent_n: float = 2.0
    mu_w: float = 1.0
    mu_n: float = 1.0
    entry_pressure: float = 1.0
    shape: float = 0.0
    porosity: float = 0.2


@dataclass(frozen=True)
class CellConfig:
    shape: str = "centered-box"
    side: float = 0.5
    thickness: float = 0.5
    mask_file: str = ""
    n: int = 16
    d: int = 2
    perm_fracture: float = 1.0
    perm_matrix: float = 1.0
    method: str = "fe"


@dataclass(frozen=True)
class MacroGridConfig:
    cells: tuple[int, ...] = (64,)
    lengths: tuple[float, ...] = (1.0,)
    dirichlet: tuple[str, ...] = ("xmax",)
    gravity: tuple[float, ...] = (0.0,)


@dataclass(frozen=True)
class RegimeSection:
    theta: float = 2.0
    coupling: bool = True


@dataclass(frozen=True)
class TimeConfig:
    t_end: float = 2.0
    dt_init: float = 0.01
    dt_max: float = 0.01


@dataclass(frozen=True)
class SourcesConfig:
    injection_region: tuple[float, ...] = (0.0, 0.0)
    injection_rate: float = 0.0
    production_region: tuple[float, ...] = (0.0, 0.0)
    production_rate: float = 0.0
    injection_s_w: float = 1.0
    t_on: float = 0.0
    t_off: float = float("inf")


@dataclass(frozen=True)
class BoundaryConfig:
    p_dirichlet: float = 0.0
    s_dirichlet: float = 1.0


@dataclass(frozen=True)
class InitialConfig:
    s_fracture: float = 0.2
    s_block: float | None = None


@dataclass(frozen=True)
class BlocksConfig:
    substeps: int = 1


@dataclass(frozen=True)
class MicroConfig:
    epsilon: float = 0.125
    resolution: int = 8
    layout: str = "strip"
    t_end: float = 0.2
    dt: float = 0.001
    s_dirichlet: float = 0.8


@dataclass(frozen=True)
class ConvergenceConfig:
    epsilons: tuple[float, ...] = (0.125, 0.0625, 0.03125)
    macro_cells: int = 256
    t_end: float = 0.2
    dt: float = 0.001
    s_fracture: float = 0.2
    s_dirichlet: float = 0.8
    resolution: int = 8
    method: str = "tpfa"


@dataclass(frozen=True)
class BlockDemoConfig:
    s0: float = 0.0
    trace: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    dt: float = 0.01
    t_end: float = 0.5


@dataclass(frozen=True)
class OutputConfig:
    snapshot_every: int = 50
    write_correctors: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    fracture: MediumConfig = field(default_factory=MediumConfig)
    matrix: MediumConfig = field(default_factory=lambda: MediumConfig(shape=0.5, porosity=0.3))
    cell: CellConfig = field(default_factory=CellConfig)
    grid: MacroGridConfig = field(default_factory=MacroGridConfig)
    regime: RegimeSection = field(default_factory=RegimeSection)
    time: TimeConfig = field(default_factory=TimeConfig)
    sources: SourcesConfig = field(default_factory=SourcesConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    blocks: BlocksConfig = field(default_factory=BlocksConfig)
    micro: MicroConfig = field(default_factory=MicroConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    block_demo: BlockDemoConfig = field(default_factory=BlockDemoConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source_text: str = field(default="", compare=False, repr=False)
    base_dir: str = field(default=".", compare=False, repr=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def curves(self) -> CurvePair:
        f = {k: v for k, v in vars(self.fracture).items() if k != "porosity"}
        m = {k: v for k, v in vars(self.matrix).items() if k != "porosity"}
        return CurvePair(MediumCurves("fracture", **f), MediumCurves("matrix", **m))


SECTIONS = {
    "curves.fracture": ("fracture", MediumConfig),
    "curves.matrix": ("matrix", MediumConfig),
    "cell": ("cell", CellConfig),
    "macro.grid": ("grid", MacroGridConfig),
    "regime": ("regime", RegimeSection),
    "time": ("time", TimeConfig),
    "sources": ("sources", SourcesConfig),
    "boundary": ("boundary", BoundaryConfig),
    "initial": ("initial", InitialConfig),
    "blocks": ("blocks", BlocksConfig),
    "micro": ("micro", MicroConfig),
    "convergence": ("convergence", ConvergenceConfig),
    "block_demo": ("block_demo", BlockDemoConfig),
    "output": ("output", OutputConfig),
}


def _convert(raw: str, annotation: str, where: str):
    raw = raw.strip()
    try:
        if annotation == "float":
            return float(raw)
        if annotation == "int":
            return int(raw)
        if annotation == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if annotation == "str":
            return raw
        if annotation == "float | None":
            return None if raw == "" else float(raw)
        if annotation == "tuple[float, ...]":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if annotation == "tuple[int, ...]":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if annotation == "tuple[str, ...]":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if annotation == "tuple[tuple[float, float], ...]":
            pairs = []
            for item in raw.split(","):
                t, v = item.split(":")
                pairs.append((float(t), float(v)))
            return tuple(pairs)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {annotation}") from exc
    raise ConfigError(f"{where}: unsupported field type {annotation}")


def parse_config(text: str, base_dir: str | Path = ".") -> ScenarioConfig:
    """Parse INI text; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    parts = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        attr, cls = SECTIONS[section]
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"[{section}] {key}: unknown key")
            values[key] = _convert(raw, known[key], f"[{section}] {key}")
        parts[attr] = cls(**values)
    return ScenarioConfig(**parts, source_text=text, base_dir=str(base_dir))


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    if path is None:
        return parse_config(DEFAULT_INI)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def with_overrides(cfg: ScenarioConfig, theta=None, epsilons=None) -> ScenarioConfig:
    from dataclasses import replace

    if theta is not None:
        cfg = replace(cfg, regime=replace(cfg.regime, theta=float(theta)))
    if epsilons:
        eps = tuple(float(e) for e in epsilons)
        cfg = replace(cfg, micro=replace(cfg.micro, epsilon=eps[0]),
                      convergence=replace(cfg.convergence, epsilons=eps))
    return cfg


def validate(cfg: ScenarioConfig) -> list[str]:
    """Assumption checks expressible on configuration data; empty when everything passes."""
    out = []
    for name, med in (("fracture", cfg.fracture), ("matrix", cfg.matrix)):
        if not 0.0 < med.porosity < 1.0:
            out.append(f"A.1: porosity out of (0,1) ({name})")
    if not cfg.cell.perm_fracture > 0 or not cfg.cell.perm_matrix > 0:
        out.append("A.2: permeability bounds must satisfy 0 < k_min <= k_max")
    pf, pm = cfg.fracture.entry_pressure, cfg.matrix.entry_pressure
    if abs(pf - pm) > 1e-12 * max(1.0, abs(pf)):
        out.append(f"A.3: P_f,c(0) = {pf} differs from P_m,c(0) = {pm}")
    for name, med in (("fracture", cfg.fracture), ("matrix", cfg.matrix)):
        kw = {k: v for k, v in vars(med).items() if k != "porosity"}
        try:
            curves = MediumCurves(name, **kw)
        except ValueError as exc:
            out.append(f"A.5: invalid {name} curves: {exc}")
            continue
        out.extend(curve_violations(curves, name))
    s = cfg.sources
    if s.injection_rate < 0 or s.production_rate < 0:
        out.append("A.9: source rates f_I, f_P must be nonnegative")
    if not 0.0 <= s.injection_s_w <= 1.0:
        out.append("A.9: injection saturations must lie in [0,1]")
    if not 0.0 <= cfg.initial.s_fracture <= 1.0:
        out.append("A.8: initial saturation out of [0,1]")
    if cfg.initial.s_block is not None and not 0.0 <= cfg.initial.s_block <= 1.0:
        out.append("A.8: initial block saturation out of [0,1]")
    if not 0.0 <= cfg.boundary.s_dirichlet <= 1.0:
        out.append("A.8: boundary saturation out of [0,1]")
    if not cfg.regime.theta > 0:
        out.append("A.2: theta must be positive")
    g = cfg.grid
    if len(g.cells) not in (1, 2) or len(g.lengths) != len(g.cells) or min(g.cells) < 1:
        out.append("grid: cells and lengths must describe a 1D or 2D grid")
    if not g.dirichlet:
        out.append("grid: Gamma_1 is empty; the pressure problem would be singular")
    if cfg.cell.shape not in ("centered-box", "horizontal-slab", "custom"):
        out.append(f"cell: unknown shape {cfg.cell.shape!r}")
    if cfg.cell.d < g.cells.__len__():
        out.append("cell: cell dimension is smaller than the macro dimension")
    t = cfg.time
    if not (t.t_end >= 0 and t.dt_init > 0 and t.dt_max >= t.dt_init):
        out.append("time: need t_end >= 0 and 0 < dt_init <= dt_max")
    if any(e <= 0 or abs(1 / e - round(1 / e)) > 1e-9 for e in (cfg.micro.epsilon,) + cfg.convergence.epsilons):
        out.append("micro: 1/epsilon must be an integer")
    return out


def gravity_vector(cfg: ScenarioConfig, d: int):
    g = np.zeros(d)
    vals = cfg.grid.gravity
    g[: min(d, len(vals))] = vals[:d]
    return tuple(g)
