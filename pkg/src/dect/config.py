"""Run configuration: typed sections, strict key checking, YAML or JSON files."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1
METHODS = ("fbp", "ync", "admm", "admm-noreg")


class ConfigError(ValueError):
    """Schema violation in a run configuration."""


@dataclass
class GridSpec:
    nx: int = 64
    ny: int = 64
    pixel_size: float = 0.625  # cm; 64 px over a 40 cm field of view


@dataclass
class GeometrySpec:
    n_angles: int = 90
    n_detectors: int = 128
    detector_spacing: float = 0.45
    detector_offset: float = 0.0


@dataclass
class SpectrumSpec:
    kvp: float = 95.0
    filter_mm_al: float = 2.5
    file: str | None = None


@dataclass
class SpectraSpec:
    low: SpectrumSpec = field(default_factory=lambda: SpectrumSpec(95.0))
    high: SpectrumSpec = field(default_factory=lambda: SpectrumSpec(130.0))


@dataclass
class NoiseSpec:
    seed: int = 0
    snr_db: float | None = 70.0
    sigma_e: float | None = None
    enabled: bool = True


@dataclass
class PhantomSpec:
    scene: list | None = None


@dataclass
class FbpSpec:
    filter: str = "ramp_hann"
    cutoff: float = 1.0


@dataclass
class YncSpec:
    median_size: int = 3
    sigma: float = 1.0


@dataclass
class LmSpec:
    max_steps: int = 3
    damping: float = 1e-3
    factor: float = 10.0
    cg_tol: float = 1e-6
    cg_max_iter: int = 50


@dataclass
class AdmmSpec:
    penalty_mu: float = 1.0
    nu: float = 1.0
    u_scale: float = 1e-5
    lambda_tv: float = 0.01
    lambda_nlm: float = 1.0
    beta: float = 0.5e-4
    patch_half_width: int = 3
    search_half_width: int = 9
    max_outer: int = 30
    inner_tv_iters: int = 50
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    init: str = "fbp"
    lm: LmSpec = field(default_factory=LmSpec)


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    grid: GridSpec = field(default_factory=GridSpec)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    spectra: SpectraSpec = field(default_factory=SpectraSpec)
    y0: float = 1e5
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    method: str = "admm"
    stride: int = 1
    fbp: FbpSpec = field(default_factory=FbpSpec)
    ync: YncSpec = field(default_factory=YncSpec)
    admm: AdmmSpec = field(default_factory=AdmmSpec)
    threads: int | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return value
    return value


def _build(cls, data, where: str = "config"):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def _check(cfg: RunConfig) -> RunConfig:
    def need(ok, msg):
        if not ok:
            raise ConfigError(msg)

    need(cfg.schema_version == SCHEMA_VERSION,
         f"schema_version {cfg.schema_version} unsupported (expected {SCHEMA_VERSION})")
    need(cfg.grid.nx >= 1 and cfg.grid.ny >= 1, "grid: nx and ny must be >= 1")
    need(cfg.grid.pixel_size > 0, "grid.pixel_size must be positive")
    need(cfg.geometry.n_angles >= 1 and cfg.geometry.n_detectors >= 1, "geometry: counts must be >= 1")
    need(cfg.geometry.detector_spacing > 0, "geometry.detector_spacing must be positive")
    need(cfg.y0 > 0, "y0 must be positive")
    need(cfg.method in METHODS, f"method must be one of {list(METHODS)}, got {cfg.method!r}")
    need(cfg.stride >= 1, "stride must be >= 1")
    need(cfg.fbp.filter in ("ramp", "ramp_hann"), "fbp.filter must be ramp or ramp_hann")
    need(0 < cfg.fbp.cutoff <= 1, "fbp.cutoff must be in (0, 1]")
    need(cfg.noise.sigma_e is None or cfg.noise.sigma_e >= 0, "noise.sigma_e must be >= 0")
    need(cfg.admm.init in ("fbp", "ync", "zeros"), "admm.init must be fbp, ync or zeros")
    need(cfg.admm.beta > 0, "admm.beta must be positive")
    need(cfg.admm.penalty_mu > 0 and cfg.admm.u_scale > 0, "admm.penalty_mu and u_scale must be positive")
    need(min(cfg.admm.nu, cfg.admm.lambda_tv, cfg.admm.lambda_nlm) >= 0, "admm weights must be >= 0")
    need(cfg.admm.search_half_width >= cfg.admm.patch_half_width >= 0,
         "admm: need search_half_width >= patch_half_width >= 0")
    need(cfg.threads is None or cfg.threads >= 1, "threads must be >= 1")
    for name in ("low", "high"):
        s = getattr(cfg.spectra, name)
        need(s.file is not None or s.kvp > 20, f"spectra.{name}.kvp must exceed 20")
    return cfg


def config_from_dict(data: dict | None) -> RunConfig:
    return _check(_build(RunConfig, data or {}))


def load_config(path) -> RunConfig:
    """Read YAML (or JSON, a YAML subset). Raises ``ConfigError`` on schema problems."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse: {str(exc).splitlines()[0]}") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=False) + "\n"
