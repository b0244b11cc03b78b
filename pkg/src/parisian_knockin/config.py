"""Run configuration: an INI file with five sections.

Grammar (``configparser`` syntax, ``#``/``;`` comments, no nesting)::

    [market]    r, D, sigma                              (required)
    [contract]  K, S_bar, J_bar, T                       (required)
                embedded_style = american | european     (default american)
    [state]     S, t, J            scalars, or comma-separated lists for `surface`
    [engine]    abs_tol, rel_tol, window_nodes, vanilla_n_x, vanilla_n_theta,
                pde_n_x, pde_n_J, mc_paths, mc_steps_per_year, seed, antithetic,
                mc_bias_correction, bias_ladder, pde_rel_tol, mc_max_se
    [output]    csv, windows_csv, pde_dump, with_delta

Every value is checked when the file is loaded; errors name the section,
the key and (when known) the line.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import DegeneracyThresholds, MarketParams, ParisianContract, ValidationError
from .montecarlo import McConfig
from .pde import PdeResolution
from .pricer import PricerConfig
from .quadrature import QuadratureConfig
from .vanilla import VanillaResolution
from .window_solver import WindowSolverConfig


class ConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-9
    window_nodes: int = 64
    vanilla_n_x: int = 801
    vanilla_n_theta: int = 401
    pde_n_x: int = 801
    pde_n_J: int = 80
    mc_paths: int = 200_000
    mc_steps_per_year: int = 20_000
    seed: int = 20240601
    antithetic: bool = True
    # two-level Richardson removal of the discrete-monitoring bias
    mc_bias_correction: bool = True
    bias_ladder: tuple[int, ...] = (1250, 5000, 20000)
    pde_rel_tol: float = 0.01
    mc_max_se: float = 3.0

    def pricer_config(self) -> PricerConfig:
        q = QuadratureConfig(self.abs_tol, self.rel_tol)
        return PricerConfig(vanilla=VanillaResolution(n_x=self.vanilla_n_x,
                                                      n_theta=self.vanilla_n_theta),
                            windows=WindowSolverConfig(nodes=self.window_nodes, quadrature=q),
                            thresholds=DegeneracyThresholds())

    def mc_config(self, seed: int | None = None) -> McConfig:
        return McConfig(self.mc_paths, self.mc_steps_per_year,
                        self.seed if seed is None else seed, self.antithetic)

    def pde_resolution(self) -> PdeResolution:
        return PdeResolution(n_x=self.pde_n_x, n_J=self.pde_n_J)


@dataclass(frozen=True)
class OutputConfig:
    csv: str | None = None
    windows_csv: str | None = None
    pde_dump: str | None = None
    with_delta: bool = True


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams
    contract: ParisianContract
    S: tuple[float, ...]
    t: float
    J: tuple[float, ...]
    engine: EngineConfig = field(default_factory=EngineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = "<memory>"


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str, source: str):
        self.p, self.text, self.source = parser, text, source

    def _where(self, section: str, key: str) -> str:
        line = _line_of(self.text, section, key)
        return f"{self.source}:{line}" if line else self.source

    def fail(self, section: str, key: str, msg: str):
        raise ConfigError(f"{self._where(section, key)}: [{section}] {key}: {msg}")

    def raw(self, section: str, key: str, required: bool):
        if not self.p.has_section(section):
            if required:
                raise ConfigError(f"{self.source}: missing section [{section}]")
            return None
        if not self.p.has_option(section, key):
            if required:
                raise ConfigError(f"{self.source}: [{section}] missing required field '{key}'")
            return None
        return self.p.get(section, key).strip()

    def num(self, section, key, default=None, kind=float):
        s = self.raw(section, key, default is None)
        if s is None:
            return default
        try:
            return kind(s)
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got {s!r}")

    def numlist(self, section, key, default=None):
        s = self.raw(section, key, default is None)
        if s is None:
            return default
        parts = [p.strip() for p in s.split(",") if p.strip()]
        if not parts:
            self.fail(section, key, "empty list")
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            self.fail(section, key, f"expected numbers, got {s!r}")

    def flag(self, section, key, default):
        s = self.raw(section, key, False)
        if s is None:
            return default
        if s.lower() not in _BOOL:
            self.fail(section, key, f"expected a boolean, got {s!r}")
        return _BOOL[s.lower()]

    def text_(self, section, key, default=None):
        s = self.raw(section, key, False)
        return default if s is None or s == "" else s


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (D, K, S_bar)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    rd = _Reader(parser, text, source)
    known = {"market", "contract", "state", "engine", "output"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"{source}: unknown section [{sec}]")

    def build(section, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except (ValidationError, ValueError) as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None

    market = build("market", lambda: MarketParams(
        rd.num("market", "r"), rd.num("market", "D"), rd.num("market", "sigma")))
    contract = build("contract", lambda: ParisianContract(
        rd.num("contract", "K"), rd.num("contract", "S_bar"), rd.num("contract", "J_bar"),
        rd.num("contract", "T"), rd.text_("contract", "embedded_style", "american").lower()))
    S = rd.numlist("state", "S")
    t = rd.num("state", "t", 0.0)
    J = rd.numlist("state", "J", (0.0,))
    d = EngineConfig()
    ints = {"window_nodes", "vanilla_n_x", "vanilla_n_theta", "pde_n_x", "pde_n_J",
            "mc_paths", "mc_steps_per_year", "seed"}
    kw = {}
    for f in dataclasses.fields(EngineConfig):
        default = getattr(d, f.name)
        if f.name in ints:
            kw[f.name] = rd.num("engine", f.name, default, int)
        elif isinstance(default, bool):
            kw[f.name] = rd.flag("engine", f.name, default)
        elif f.name == "bias_ladder":
            vals = rd.numlist("engine", f.name, ())
            kw[f.name] = tuple(int(v) for v in vals) if vals else default
        else:
            kw[f.name] = rd.num("engine", f.name, default)
    engine = EngineConfig(**kw)
    output = OutputConfig(rd.text_("output", "csv"), rd.text_("output", "windows_csv"),
                          rd.text_("output", "pde_dump"),
                          rd.flag("output", "with_delta", True))
    cfg = RunConfig(market, contract, S, t, J, engine, output, source)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check every invariant up front so engines never see bad input."""
    src = cfg.source
    c = cfg.contract
    if not 0 <= cfg.t <= c.T:
        raise ConfigError(f"{src}: [state] t must lie in [0, T], got {cfg.t}")
    for s in cfg.S:
        if not s > 0:
            raise ConfigError(f"{src}: [state] S must be positive, got {s}")
    for j in cfg.J:
        if not 0 <= j <= c.J_bar:
            raise ConfigError(f"{src}: [state] J must lie in [0, J_bar], got {j}")
    e = cfg.engine
    try:
        e.pricer_config()
        e.mc_config()
        e.pde_resolution()
        QuadratureConfig(e.abs_tol, e.rel_tol)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(f"{src}: [engine] {exc}") from None
    if len(e.bias_ladder) < 3:
        raise ConfigError(f"{src}: [engine] bias_ladder needs at least three step counts")
    if not e.pde_rel_tol > 0 or not e.mc_max_se > 0:
        raise ConfigError(f"{src}: [engine] tolerances must be positive")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


DEFAULT_CONFIG_TEXT = """\
# Default contract: down-and-in Parisian call, American embedded call.
[market]
r = 0.05
D = 0.04
sigma = 0.2

[contract]
K = 100
S_bar = 95
J_bar = 0.05
T = 1.0
embedded_style = american

[state]
S = 100          # comma-separated list allowed for `surface`
t = 0.0
J = 0.0

[engine]
abs_tol = 1e-11
rel_tol = 1e-9
window_nodes = 64
pde_n_x = 801
pde_n_J = 80
mc_paths = 200000
mc_steps_per_year = 20000
seed = 20240601
antithetic = true
mc_bias_correction = true
bias_ladder = 1250, 5000, 20000
pde_rel_tol = 0.01
mc_max_se = 3

[output]
with_delta = true
"""
