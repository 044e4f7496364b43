"""Run configuration: dataclass sections, presets, TOML files and overrides.

A config file is TOML with an optional top-level ``preset`` key and one table
per section::

    preset = "image-synthesis"

    [run]
    seed = 7
    iterations = 200

    [prior]
    lambda2 = 0.0

Resolution order: built-in defaults, then the preset, then the file, then
command-line overrides. Unknown sections or keys are rejected and every value
is type-checked against the field default.
"""

from __future__ import annotations

import copy
import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import tomli_w

from .errors import ConfigError
from .losses import FMReduction, JacobianMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

RENDERER_KINDS = ("latent-map", "layered")
BACKEND_KINDS = ("mock-pointmass", "mock-linear", "pretrained")
LSD_WEIGHTINGS = ("constant", "sigma-squared")


@dataclass
class RunSection:
    seed: int = 0
    iterations: int = 1000
    prompt: str = "a high quality photo of a red fire hydrant"
    out_dir: str = "runs/latest"
    checkpoint_every: int = 100
    log_wall_time: bool = False


@dataclass
class ScheduleSection:
    num_steps: int = 1000
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    interpolation: str = "scaled-linear"
    t_min: int = 20
    t_max: int = 980


@dataclass
class BackendSection:
    kind: str = "mock-pointmass"
    weights_path: str = ""
    device: str = "cpu"
    version: str = "1.5"
    target_seed: int = 1
    target_mean: float = 0.0
    target_std: float = 1.0
    prior_std: float = 0.5
    decoder_seed: int = 0


@dataclass
class PriorSection:
    lambda1: float = 3.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    jacobian_mode: str = JacobianMode.IDENTITY_APPROX.value
    fm_reduction: str = FMReduction.NORMALIZED.value
    fm_levels: list = field(default_factory=list)
    kl_strict: bool = False
    lsd_weighting: str = "constant"
    guidance_scale: float = 7.5


@dataclass
class OptimizerSection:
    method: str = "adamw"
    lr: float = 0.1
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RendererSection:
    kind: str = "latent-map"
    latent_channels: int = 4
    latent_height: int = 64
    latent_width: int = 64
    image_path: str = ""
    mask_path: str = ""
    image_size: int = 512
    base_channels: int = 16
    mask_weight: float = 1.0
    mask_reduction: str = "mean"
    stop_grad_encoder: bool = False


@dataclass
class RunConfig:
    preset: str = ""
    run: RunSection = field(default_factory=RunSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    backend: BackendSection = field(default_factory=BackendSection)
    prior: PriorSection = field(default_factory=PriorSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    renderer: RendererSection = field(default_factory=RendererSection)

    def validate(self, check_files: bool = True) -> RunConfig:
        """Raise :class:`ConfigError` on any invalid field; return self."""
        r, s, b, p, o, rd = self.run, self.schedule, self.backend, self.prior, self.optimizer, self.renderer
        if r.iterations < 1:
            raise ConfigError("run.iterations must be >= 1")
        if r.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be >= 0")
        if s.num_steps < 1:
            raise ConfigError("schedule.num_steps must be >= 1")
        if not 0 < s.beta_start <= s.beta_end < 1:
            raise ConfigError("need 0 < schedule.beta_start <= schedule.beta_end < 1")
        if not 0 <= s.t_min <= s.t_max < s.num_steps:
            raise ConfigError(f"timestep range [{s.t_min}, {s.t_max}] invalid for {s.num_steps} steps")
        _choice("backend.kind", b.kind, BACKEND_KINDS)
        _choice("renderer.kind", rd.kind, RENDERER_KINDS)
        _choice("prior.jacobian_mode", p.jacobian_mode, [m.value for m in JacobianMode])
        _choice("prior.fm_reduction", p.fm_reduction, [m.value for m in FMReduction])
        _choice("prior.lsd_weighting", p.lsd_weighting, LSD_WEIGHTINGS)
        _choice("renderer.mask_reduction", rd.mask_reduction, ("mean", "sum"))
        _choice("optimizer.method", o.method, ("adamw",))
        for name in ("lambda1", "lambda2", "lambda3"):
            if not getattr(p, name) >= 0:
                raise ConfigError(f"prior.{name} must be >= 0")
        if p.guidance_scale < 0:
            raise ConfigError("prior.guidance_scale must be >= 0")
        if not o.lr > 0:
            raise ConfigError("optimizer.lr must be > 0")
        if o.weight_decay < 0 or not 0 <= o.beta1 < 1 or not 0 <= o.beta2 < 1 or o.eps <= 0:
            raise ConfigError("invalid optimizer hyperparameters")
        if rd.mask_weight < 0:
            raise ConfigError("renderer.mask_weight must be >= 0")
        if min(rd.latent_channels, rd.latent_height, rd.latent_width) < 1:
            raise ConfigError("latent dimensions must be positive")
        if rd.latent_channels * rd.latent_height * rd.latent_width < 2:
            raise ConfigError("latent needs at least two elements")
        if rd.kind == "layered":
            if rd.image_size < 0 or rd.image_size % 8:
                raise ConfigError("renderer.image_size must be a multiple of 8 (0 keeps the input size)")
            if rd.base_channels < 1:
                raise ConfigError("renderer.base_channels must be >= 1")
            if check_files:
                for key in ("image_path", "mask_path"):
                    value = getattr(rd, key)
                    if not value:
                        raise ConfigError(f"renderer.{key} is required for the layered renderer")
                    if not Path(value).is_file():
                        raise ConfigError(f"renderer.{key}: file not found: {value}")
        return self


def _choice(key: str, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {list(allowed)}, got {value!r}")


SECTIONS = tuple(f.name for f in fields(RunConfig) if f.name != "preset")

PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "image-synthesis": {
        "renderer": {"kind": "latent-map", "latent_channels": 4, "latent_height": 64, "latent_width": 64},
        "prior": {"lambda1": 3.0, "lambda2": 0.1, "lambda3": 1.0},
        "optimizer": {"method": "adamw", "lr": 0.1},
        "run": {"iterations": 1000},
    },
    "lsd-only-baseline": {
        "renderer": {"kind": "latent-map", "latent_channels": 4, "latent_height": 64, "latent_width": 64},
        "prior": {"lambda1": 0.0, "lambda2": 0.0, "lambda3": 1.0},
        "optimizer": {"method": "adamw", "lr": 0.1},
        "run": {"iterations": 1000},
    },
    "layered-edit": {
        "renderer": {"kind": "layered", "mask_weight": 1.0, "mask_reduction": "mean", "image_size": 512},
        "prior": {"lambda1": 1e-5, "lambda2": 1e-7, "lambda3": 1e-6},
        "optimizer": {"method": "adamw", "lr": 2.5e-3},
        "run": {"iterations": 1000},
    },
}


def preset(name: str) -> RunConfig:
    """Return a fresh config carrying the named preset's published settings."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    cfg = RunConfig(preset=name)
    apply_mapping(cfg, PRESETS[name])
    return cfg


def _coerce(key: str, value, default):
    """Type-check a parsed TOML value against a field default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, list) and all(isinstance(x, str) for x in value):
            return list(value)
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


def parse_text(key: str, text: str, default):
    """Parse a command-line string into the type of ``default``."""
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
    elif isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            pass
    elif isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            pass
    elif isinstance(default, str):
        return text
    elif isinstance(default, list):
        return [x.strip() for x in text.split(",") if x.strip()]
    raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}")


def _section(cfg: RunConfig, name: str):
    if name not in SECTIONS:
        raise ConfigError(f"unknown config section {name!r}; expected one of {list(SECTIONS)}")
    return getattr(cfg, name)


def _field_names(obj) -> list[str]:
    return [f.name for f in fields(obj)]


def apply_mapping(cfg: RunConfig, doc: Mapping[str, Any]) -> RunConfig:
    """Apply a nested ``{section: {key: value}}`` mapping in place."""
    for sec_name, values in doc.items():
        if sec_name == "preset":
            continue
        sec = _section(cfg, sec_name)
        if not isinstance(values, Mapping):
            raise ConfigError(f"[{sec_name}] must be a table")
        for key, value in values.items():
            if key not in _field_names(sec):
                raise ConfigError(f"unknown config key {sec_name}.{key}")
            setattr(sec, key, _coerce(f"{sec_name}.{key}", value, getattr(sec, key)))
    return cfg


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides; string values are parsed."""
    for dotted, value in overrides.items():
        sec_name, _, key = dotted.partition(".")
        sec = _section(cfg, sec_name)
        if key not in _field_names(sec):
            raise ConfigError(f"unknown config key {dotted}")
        default = getattr(sec, key)
        if isinstance(value, str) and not isinstance(default, str):
            value = parse_text(dotted, value, default)
        setattr(sec, key, _coerce(dotted, value, default))
    return cfg


def config_keys() -> list[tuple[str, Any]]:
    """Every ``section.key`` with its built-in default, in declaration order."""
    base = RunConfig()
    return [(f"{s}.{k}", getattr(getattr(base, s), k)) for s in SECTIONS for k in _field_names(getattr(base, s))]


def resolve(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    preset_name: str | None = None,
) -> RunConfig:
    """Build a config from defaults, preset, optional file and overrides.

    ``preset_name`` (e.g. from ``--preset``) beats a ``preset`` key in the file.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    file_preset = doc.get("preset", "")
    if not isinstance(file_preset, str):
        raise ConfigError("preset must be a string")
    name = preset_name or file_preset
    cfg = preset(name) if name else RunConfig()
    apply_mapping(cfg, doc)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def to_dict(cfg: RunConfig) -> dict[str, Any]:
    return copy.deepcopy(dataclasses.asdict(cfg))


def from_dict(doc: Mapping[str, Any]) -> RunConfig:
    unknown = set(doc) - set(SECTIONS) - {"preset"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    cfg = RunConfig(preset=doc.get("preset", ""))
    return apply_mapping(cfg, doc)


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> RunConfig:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from exc
