"""Experiment configuration read from INI files (``configparser``).

Sections: ``[prior]``, ``[schedule]``, ``[problem]``, ``[sampler]``,
``[metrics]``, ``[seeds]``.  Missing keys take the dataclass defaults, unknown
keys are rejected so typos do not pass silently.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .grf import (
    FieldModel,
    anisotropy_from_potential,
    build_mesh,
    constant_anisotropy,
    equidistant_nodes,
    isotropic_field,
)
from .rng import make_rng, normal, uniform_open


@dataclass
class PriorConfig:
    n_core: int = 16
    margin_fraction: float = 0.1
    range_a: float = 0.15
    a_min: float = 0.05
    a_max: float = 0.3
    nu: float = 2.0
    rho1: float = 1.0
    rho2: float = 0.5
    ratio_min: float = 0.1
    ratio_max: float = 1.0
    angle: float = 0.0
    anisotropy: str = "constant"  # isotropic | constant | potential
    spline_nodes: int = 6
    target_variance: float = 1.0
    degree: int = 128
    per_param: int = 5
    mixture_ranges: str = ""  # comma-separated ranges; non-empty selects an equal-weight mixture

    def validate(self):
        if self.n_core < 2:
            raise ValueError("prior.n_core must be >= 2")
        if self.anisotropy not in ("isotropic", "constant", "potential"):
            raise ValueError(f"unknown prior.anisotropy {self.anisotropy!r}")
        if not (0 < self.a_min <= self.a_max):
            raise ValueError("need 0 < prior.a_min <= prior.a_max")
        if not (0 < self.ratio_min <= self.ratio_max <= 1):
            raise ValueError("need 0 < prior.ratio_min <= prior.ratio_max <= 1")


@dataclass
class ScheduleConfig:
    steps: int = 300  # transitions T; the schedule has T + 1 levels
    rho: float = 3.0
    sigma_min: float = 2e-3
    sigma_max: float = 80.0

    def validate(self):
        if self.steps < 1:
            raise ValueError("schedule.steps must be >= 1")
        if not (0.0 <= self.sigma_min < self.sigma_max) or self.rho <= 0:
            raise ValueError("need 0 <= schedule.sigma_min < schedule.sigma_max and rho > 0")


@dataclass
class ProblemConfig:
    mask: str = "unif"  # unif | clust
    d_y: int = 12
    mean_clusters: float = 10.0
    radius: float = 0.1
    points_per_cluster: int = 30
    sigma_y: float = 0.05

    def validate(self):
        if self.mask not in ("unif", "clust"):
            raise ValueError(f"unknown problem.mask {self.mask!r}")
        if not self.sigma_y > 0:
            raise ValueError("problem.sigma_y must be positive")


@dataclass
class SamplerConfig:
    method: str = "ddpm"
    zeta: float = 1.0
    mcmc_steps: int = 2000
    scale_fraction: float = 0.05
    n_chains: int = 1
    burn_in: float = 0.2
    thin: int = 10

    def validate(self):
        if self.zeta < 0:
            raise ValueError("sampler.zeta must be non-negative")


@dataclass
class MetricsConfig:
    n_slices: int = 4096
    replicates: int = 20
    sigma_lo: float = 1e-3
    sigma_hi: float = 10.0
    sigma_num: int = 40


@dataclass
class SeedsConfig:
    base: int = 0


_SECTIONS = {
    "prior": PriorConfig,
    "schedule": ScheduleConfig,
    "problem": ProblemConfig,
    "sampler": SamplerConfig,
    "metrics": MetricsConfig,
    "seeds": SeedsConfig,
}


@dataclass
class ExperimentConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    def validate(self) -> "ExperimentConfig":
        for name in _SECTIONS:
            block = getattr(self, name)
            if hasattr(block, "validate"):
                block.validate()
        return self

    def to_ini(self) -> str:
        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in asdict(getattr(self, name)).items()]
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini())


def _coerce(typ, raw: str):
    typ = {"int": int, "float": float, "str": str}.get(typ, typ)
    if typ is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    return typ(raw)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    cfg = ExperimentConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        block = getattr(cfg, section)
        known = {f.name: f.type for f in fields(block)}
        for key, raw in cp.items(section):
            if key not in known:
                raise ValueError(f"unknown key {section}.{key}")
            try:
                setattr(block, key, _coerce(known[key], raw))
            except ValueError as exc:
                raise ValueError(f"{section}.{key}: {exc}") from None
    return cfg.validate()


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(Path(path).read_text())


# -- prior construction from a config ---------------------------------------

def build_model(cfg: PriorConfig, range_a: float | None = None, rho2: float | None = None,
                angle: float | None = None, aniso_seed: int = 0) -> FieldModel:
    mesh = build_mesh(cfg.n_core, cfg.margin_fraction)
    a = cfg.range_a if range_a is None else range_a
    r2 = cfg.rho2 if rho2 is None else rho2
    th = cfg.angle if angle is None else angle
    if cfg.anisotropy == "isotropic":
        aniso = isotropic_field(mesh)
    elif cfg.anisotropy == "constant":
        aniso = constant_anisotropy(mesh, cfg.rho1, r2, th)
    else:
        nodes = equidistant_nodes(cfg.spline_nodes)
        pot = normal(make_rng(aniso_seed, "spline-potential"), nodes.shape[0])
        aniso = anisotropy_from_potential(nodes, pot, cfg.rho1, r2, mesh)
    return FieldModel.build(mesh, aniso, a, cfg.nu, cfg.target_variance)


def draw_hyperparameters(cfg: PriorConfig, rng) -> dict:
    """One draw of the field hyper-prior: uniform range, uniform minor axis
    ratio, uniform angle (constant mode) or a random spline potential."""
    u = uniform_open(rng, 3)
    return dict(
        range_a=float(cfg.a_min + u[0] * (cfg.a_max - cfg.a_min)),
        rho_min=float(cfg.ratio_min + u[1] * (cfg.ratio_max - cfg.ratio_min)),
        angle=float(np.pi * u[2]),
        aniso_seed=int(rng.integers(0, 2**62)),
    )
