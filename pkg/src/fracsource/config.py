"""Experiment configuration: INI text <-> :class:`ExperimentConfig` and builders."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .elliptic import BoundarySubset, CoefficientField, DomainSpec
from .errors import ConfigError
from .forward import SourceSpec, named_profile

SECTIONS = ("domain", "coefficients", "problem", "source", "measurement", "solver", "reconstruction", "gset", "output")


def _floats(text: str) -> list:
    text = text.strip()
    return [float(v) for v in text.replace(",", " ").split()] if text else []


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


def _positions(text: str) -> list:
    """``"0, 3-5"`` -> ``[0, 3, 4, 5]``."""
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


@dataclass
class ExperimentConfig:
    # domain
    extents: list = field(default_factory=lambda: [0.0, math.pi])
    resolution: list = field(default_factory=lambda: [257])
    # coefficients: constant | variable | csv
    coeff_preset: str = "constant"
    a: float = 1.0
    q: float = 0.0
    rho: float = 1.0
    coeff_path: str = ""
    # problem
    alpha: float = 0.5
    T: float = 1.0
    delta: float = 0.4
    epsilon: float = 0.4
    T_max: float = 8.0
    # source
    sigma: str = "hat"
    sigma_params: list = field(default_factory=lambda: [0.2, 0.6])
    f_form: str = "modes"
    f_params: list = field(default_factory=lambda: [2.0, 0.0, -1.0])
    # measurement: boundary positions (indices into the domain's boundary list)
    gamma: str = "0"
    x0: int = 0
    # solver
    solver: str = "spectral"
    modes: int = 64
    dt: float = 0.002
    # reconstruction
    n_active: int = 3
    reg_param: Optional[float] = None
    noise_level: float = 0.0
    seed: int = 0
    sigma2: str = "scale 2"
    radius: float = 4.0
    data: str = ""
    # gset
    k_max: int = 4
    zero_tol: Optional[float] = None
    hopf_g: str = "-sin"
    k1: int = 0
    k2: int = 0
    # output
    out_dir: str = "out"

    _LAYOUT = {
        "domain": ["extents", "resolution"],
        "coefficients": [("preset", "coeff_preset"), "a", "q", "rho", ("path", "coeff_path")],
        "problem": ["alpha", "T", "delta", "epsilon", "T_max"],
        "source": ["sigma", "sigma_params", "f_form", "f_params"],
        "measurement": ["gamma", "x0"],
        "solver": ["solver", "modes", "dt"],
        "reconstruction": ["n_active", "reg_param", "noise_level", "seed", "sigma2", "radius", "data"],
        "gset": ["k_max", "zero_tol", "hopf_g", "k1", "k2"],
        "output": [("dir", "out_dir")],
    }

    def __post_init__(self):
        self.validate()

    # {{{ text round trip

    @classmethod
    def from_text(cls, text: str, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        unknown = set(parser.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        types = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls()
        for section, keys in cls._LAYOUT.items():
            if not parser.has_section(section):
                continue
            known = {}
            for k in keys:
                key, attr = (k, k) if isinstance(k, str) else k
                known[key] = attr
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                attr = known[key]
                kwargs[attr] = _parse_value(raw, getattr(defaults, attr), types[attr].name)
        cfg = cls(**kwargs)
        if base_dir is not None:
            if cfg.coeff_path and not Path(cfg.coeff_path).is_absolute():
                cfg.coeff_path = str(Path(base_dir) / cfg.coeff_path)
            if cfg.data and not Path(cfg.data).is_absolute():
                cfg.data = str(Path(base_dir) / cfg.data)
        cfg.validate(check_files=True)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_text(path.read_text(), base_dir=path.parent)

    def to_text(self) -> str:
        lines = []
        for section, keys in self._LAYOUT.items():
            lines.append(f"[{section}]")
            for k in keys:
                key, attr = (k, k) if isinstance(k, str) else k
                lines.append(f"{key} = {_fmt(getattr(self, attr))}".rstrip())
            lines.append("")
        return "\n".join(lines)

    # }}}

    def validate(self, check_files: bool = False) -> None:
        if len(self.extents) not in (2, 4):
            raise ConfigError("extents must list 2 (interval) or 4 (rectangle) numbers")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 < self.delta < self.T:
            raise ConfigError("need 0 < delta < T")
        if not 0 < self.epsilon < self.T:
            raise ConfigError("need 0 < epsilon < T")
        if not self.T_max >= self.T:
            raise ConfigError("need T_max >= T")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.solver not in ("spectral", "l1"):
            raise ConfigError("solver must be 'spectral' or 'l1'")
        if self.coeff_preset not in ("constant", "variable", "csv"):
            raise ConfigError("coefficient preset must be constant, variable or csv")
        if self.f_form not in ("modes", "bump", "zero"):
            raise ConfigError("f_form must be modes, bump or zero")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be non-negative")
        if check_files:
            if self.coeff_preset == "csv" and not Path(self.coeff_path).exists():
                raise ConfigError(f"coefficient file {self.coeff_path!r} does not exist")
            if self.data and not Path(self.data).exists():
                raise ConfigError(f"data file {self.data!r} does not exist")

    # {{{ builders

    def domain(self) -> DomainSpec:
        ext = self.extents
        res = [int(r) for r in self.resolution]
        try:
            if len(ext) == 2:
                return DomainSpec.interval(ext[0], ext[1], res[0])
            return DomainSpec.rectangle((ext[0], ext[1]), (ext[2], ext[3]), res if len(res) == 2 else res[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def coefficients(self, domain: DomainSpec) -> CoefficientField:
        if self.coeff_preset == "constant":
            return CoefficientField.constant(domain, self.a, self.q, self.rho)
        if self.coeff_preset == "variable":
            # smooth positive closed forms scaled by the configured constants
            return CoefficientField.from_functions(
                domain,
                a=lambda x: self.a * (1.0 + 0.3 * np.sin(x.sum(axis=1)) ** 2),
                q=lambda x: self.q + 0.5 * np.cos(x[:, 0]) ** 2,
                rho=lambda x: self.rho * (1.0 + 0.2 * np.cos(x.sum(axis=1))),
            )
        return CoefficientField.from_csv(domain, self.coeff_path)

    def profile(self, spec: Optional[str] = None):
        name = self.sigma if spec is None else spec
        return named_profile(name, *self.sigma_params)

    def second_profile(self):
        """Time profile for the proportionality test: ``scale c`` or ``<name> p1 p2 ...``."""
        parts = self.sigma2.split()
        if not parts:
            raise ConfigError("sigma2 is empty")
        if parts[0] == "scale":
            factor = float(parts[1])
            base = self.profile()
            return lambda t: factor * base(t)
        return named_profile(parts[0], *[float(v) for v in parts[1:]])

    def source(self, eig) -> SourceSpec:
        dom, coeffs = eig.domain, eig.coeffs
        if self.f_form == "zero":
            f = np.zeros(dom.n_nodes)
        elif self.f_form == "modes":
            w = np.zeros(eig.n_modes)
            if len(self.f_params) > eig.n_modes:
                raise ConfigError("more mode weights than retained modes")
            w[: len(self.f_params)] = self.f_params
            f = coeffs.rho * eig.synthesize(w)
        else:
            centre = np.asarray(self.f_params[: dom.dimension])
            width = self.f_params[dom.dimension] if len(self.f_params) > dom.dimension else 0.5
            r2 = ((dom.coordinates - centre) ** 2).sum(axis=1) / width**2
            f = np.where(r2 < 1.0, np.exp(1.0 - 1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
            f[np.setdiff1d(np.arange(dom.n_nodes), dom.interior)] = 0.0
        return SourceSpec(f, self.profile(), self.T, self.delta)

    def gamma_subset(self, domain: DomainSpec) -> BoundarySubset:
        pos = _positions(self.gamma)
        if not pos or max(pos) >= len(domain.boundary) or min(pos) < 0:
            raise ConfigError(f"gamma positions {self.gamma!r} outside 0..{len(domain.boundary) - 1}")
        return domain.boundary.subset(pos)

    def x0_subset(self, domain: DomainSpec) -> BoundarySubset:
        if not 0 <= self.x0 < len(domain.boundary):
            raise ConfigError(f"x0 position {self.x0} outside 0..{len(domain.boundary) - 1}")
        return domain.boundary.subset([self.x0])

    def measured_subset(self, domain: DomainSpec) -> BoundarySubset:
        """Gamma plus x0, in ascending boundary order."""
        pos = sorted(set(_positions(self.gamma)) | {self.x0})
        return domain.boundary.subset(pos)

    # }}}


def _parse_value(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if name in ("reg_param", "zero_tol"):
            return float(raw) if raw else None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            vals = _floats(raw)
            return [int(v) for v in vals] if name == "resolution" else vals
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {name}: {exc}") from exc
    return raw


PRESETS = {
    "paper-1d-a05": """\
[domain]
extents = 0.0, 3.141592653589793
resolution = 257

[problem]
alpha = 0.5
T = 1.0
delta = 0.4
epsilon = 0.4
T_max = 8.0

[source]
sigma = hat
sigma_params = 0.2, 0.6
f_form = modes
f_params = 2.0, 0.0, -1.0

[measurement]
gamma = 0
x0 = 0

[solver]
modes = 64
dt = 0.002
""",
    "minimal-1d": """\
[domain]
extents = 0.0, 3.141592653589793
resolution = 65

[problem]
T_max = 2.0

[source]
f_params = 1.0

[measurement]
gamma = 0-1

[solver]
modes = 16
dt = 0.01
""",
    "zero-1d": """\
[domain]
resolution = 65

[problem]
T_max = 2.0

[source]
f_form = zero

[solver]
modes = 16
dt = 0.01
""",
    "square-2d": """\
[domain]
extents = 0.0, 3.141592653589793, 0.0, 3.141592653589793
resolution = 33

[coefficients]
preset = variable

[problem]
alpha = 0.6
T_max = 6.0

[source]
f_form = modes
f_params = 1.0, 0.5, -0.5

[measurement]
gamma = 0-30
x0 = 10

[solver]
modes = 200
dt = 0.005
""",
}


def preset(name: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_text(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
