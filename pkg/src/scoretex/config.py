"""Run configuration: one INI file per run, mirrored into dataclasses.

Sections map one-to-one onto module knobs (geometry, lighting, field,
diffusion, personalize, distill, eval).  Parsing is strict — an unknown
section or key raises instead of being ignored, so typos can't silently
fall back to defaults.  The resolved config is copied into each run's
output directory for provenance.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Malformed run configuration (bad file, key, or value)."""


@dataclass
class GeometrySection:
    resolution: int = 64          # render size during distillation
    radius_min: float = 2.8
    radius_max: float = 3.4
    elevation_min: float = -10.0
    elevation_max: float = 45.0
    fov_y_deg: float = 45.0


@dataclass
class LightingSection:
    preset: str = "three-point"
    intensity: float = 2.5


@dataclass
class FieldSection:
    levels: int = 16
    base_resolution: int = 16
    per_level_scale: float = 1.382
    features_per_level: int = 2
    table_size_log2: int = 19
    hidden_width: int = 64
    hidden_layers: int = 2
    bake_resolution: int = 256


@dataclass
class DiffusionSection:
    widths: tuple = (32, 64, 128)
    embed_dim: int = 128
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    pretrain_steps: int = 4000
    control_steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-4
    corpus_count: int = 256
    corpus_resolution: int = 32
    heldout_fraction: float = 0.1


@dataclass
class PersonalizeSection:
    steps: int = 400
    lr: float = 1e-4
    batch_size: int = 8
    exemplar_size: int = 64
    prompt: str = "a photo of [V] object"


@dataclass
class DistillSection:
    steps: int = 2000
    mode: str = "pgsd"            # pgsd | vsd | sds
    use_control: str = "normal"   # none | normal | depth
    cfg_weight: float = 1.0
    phi_source: str = "generic_pretrained"
    lora_removed: bool = True
    train_camera_encoder: bool = True
    # hash tables tolerate a much hotter rate than the MLP head
    encoding_lr: float = 0.01
    mlp_lr: float = 0.001
    camera_lr: float = 1e-4
    t_min: float = 0.02
    t_max: float = 0.98
    snapshot_every: int = 0


@dataclass
class EvalSection:
    resolution: int = 64
    elevation: float = 15.0
    radius: float = 3.0


@dataclass
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    lighting: LightingSection = field(default_factory=LightingSection)
    field_: FieldSection = field(default_factory=FieldSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    personalize: PersonalizeSection = field(default_factory=PersonalizeSection)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)


# dataclass attribute -> INI section name ("field" is a keyword-ish clash)
_SECTIONS = {"geometry": "geometry", "lighting": "lighting", "field_": "field",
             "diffusion": "diffusion", "personalize": "personalize",
             "distill": "distill", "eval": "eval"}
_ATTR_FOR = {v: k for k, v in _SECTIONS.items()}

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _parse_value(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is tuple:
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path) -> RunConfig:
    """Parse an INI run config, rejecting unknown sections/keys."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = RunConfig()
    for section in parser.sections():
        attr = _ATTR_FOR.get(section)
        if attr is None:
            raise ConfigError(f"{path}: unknown section [{section}]")
        target = getattr(cfg, attr)
        hints = typing.get_type_hints(type(target))
        for key, raw in parser.items(section):
            if key not in hints:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            value = _parse_value(raw, hints[key], f"{path}: [{section}] {key}")
            setattr(target, key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    d = cfg.distill
    if d.mode not in ("pgsd", "vsd", "sds"):
        raise ConfigError(f"distill.mode must be pgsd|vsd|sds, got {d.mode!r}")
    if d.use_control not in ("none", "normal", "depth"):
        raise ConfigError(f"distill.use_control invalid: {d.use_control!r}")
    if d.phi_source not in ("generic_pretrained", "personalized"):
        raise ConfigError(f"distill.phi_source invalid: {d.phi_source!r}")
    if not 0.0 <= d.t_min < d.t_max <= 1.0:
        raise ConfigError("distill t range must satisfy 0 <= t_min < t_max <= 1")
    g = cfg.geometry
    if g.radius_min > g.radius_max or g.elevation_min > g.elevation_max:
        raise ConfigError("geometry ranges must be ordered min <= max")
    if cfg.diffusion.timesteps < 2:
        raise ConfigError("diffusion.timesteps must be >= 2")
    for name, val in (("geometry.resolution", g.resolution),
                      ("diffusion.corpus_resolution",
                       cfg.diffusion.corpus_resolution),
                      ("personalize.exemplar_size",
                       cfg.personalize.exemplar_size)):
        if val < 16 or val % 4:
            raise ConfigError(f"{name} must be >= 16 and divisible by 4")
    if "[V]" not in cfg.personalize.prompt.split():
        raise ConfigError("personalize.prompt must contain the subject token [V]")


def save_config(cfg: RunConfig, path) -> None:
    lines = []
    for attr, section in _SECTIONS.items():
        lines.append(f"[{section}]")
        for f in dataclasses.fields(getattr(cfg, attr)):
            lines.append(f"{f.name} = {_format_value(getattr(getattr(cfg, attr), f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def config_lines(cfg: RunConfig) -> list[str]:
    """Flattened `section.key value` lines (dry-run plan printing)."""
    out = []
    for attr, section in _SECTIONS.items():
        for f in dataclasses.fields(getattr(cfg, attr)):
            out.append(f"{section}.{f.name} "
                       f"{_format_value(getattr(getattr(cfg, attr), f.name))}")
    return out
