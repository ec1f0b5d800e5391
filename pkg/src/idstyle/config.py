"""Run configuration: one INI document, strict keys, full echo.

Unknown sections or keys are hard errors so experiments cannot drift
silently; every command that consumes a config writes the fully
resolved version next to its outputs.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ParameterError
from .guidance import REDUCTIONS
from .latentcodec import CODEC_MODES
from .schedule import SCHEDULE_KINDS

PREDICTOR_KINDS = ("point_mass", "gaussian_prior", "style_pull")
EMBEDDER_KINDS = ("toy",)


@dataclass
class PipelineConfig:
    # [schedule]
    schedule_kind: str = "scaled_linear"
    beta_start: float = 0.00085
    beta_end: float = 0.012
    num_train_steps: int = 1000
    # [sampler]
    inference_steps: int = 10
    inversion_steps: int = 6
    fixed_point_iters: int = 2
    # [guidance]
    lambda_c: float = 0.0
    reduction: str = "sum"
    guidance_enabled: bool = True
    guidance_iterations: int = 1
    # [codec]
    codec_mode: str = "identity"
    codec_factor: int = 8
    # [mosaic]
    tile_size: int = 256
    feather: int = 0
    # [predictor]
    predictor_kind: str = "point_mass"
    style_image: str = ""
    gamma: float = 0.7
    sigma2: float = 1.0
    # [embedder]
    embedder_kind: str = "toy"
    embedder_size: int = 16
    # [demo]
    seed: int = 0


# section -> key -> (attribute, parser)
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "schedule": {
        "kind": ("schedule_kind", str),
        "beta_start": ("beta_start", float),
        "beta_end": ("beta_end", float),
        "num_train_steps": ("num_train_steps", int),
    },
    "sampler": {
        "inference_steps": ("inference_steps", int),
        "inversion_steps": ("inversion_steps", int),
        "fixed_point_iters": ("fixed_point_iters", int),
    },
    "guidance": {
        "lambda_c": ("lambda_c", float),
        "reduction": ("reduction", str),
        "enabled": ("guidance_enabled", bool),
        "iterations": ("guidance_iterations", int),
    },
    "codec": {
        "mode": ("codec_mode", str),
        "factor": ("codec_factor", int),
    },
    "mosaic": {
        "tile_size": ("tile_size", int),
        "feather": ("feather", int),
    },
    "predictor": {
        "kind": ("predictor_kind", str),
        "style_image": ("style_image", str),
        "gamma": ("gamma", float),
        "sigma2": ("sigma2", float),
    },
    "embedder": {
        "kind": ("embedder_kind", str),
        "size": ("embedder_size", int),
    },
    "demo": {
        "seed": ("seed", int),
    },
}


def _parse_bool(raw: str, where: str) -> bool:
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise ParameterError(f"{where}: expected a boolean, got {raw!r}")


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    if cfg.schedule_kind not in SCHEDULE_KINDS:
        raise ParameterError(f"unknown schedule kind {cfg.schedule_kind!r}")
    if cfg.reduction not in REDUCTIONS:
        raise ParameterError(f"unknown reduction {cfg.reduction!r}")
    if cfg.codec_mode not in CODEC_MODES:
        raise ParameterError(f"unknown codec mode {cfg.codec_mode!r}")
    if cfg.predictor_kind not in PREDICTOR_KINDS:
        raise ParameterError(f"unknown predictor kind {cfg.predictor_kind!r}")
    if cfg.embedder_kind not in EMBEDDER_KINDS:
        raise ParameterError(f"unknown embedder kind {cfg.embedder_kind!r}")
    if cfg.lambda_c < 0:
        raise ParameterError(f"lambda_c must be >= 0, got {cfg.lambda_c}")
    for name in ("num_train_steps", "inference_steps", "inversion_steps",
                 "codec_factor", "tile_size", "guidance_iterations",
                 "embedder_size"):
        if getattr(cfg, name) < 1:
            raise ParameterError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    for name in ("fixed_point_iters", "feather"):
        if getattr(cfg, name) < 0:
            raise ParameterError(f"{name} must be >= 0, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.gamma <= 1.0:
        raise ParameterError(f"gamma must be in [0, 1], got {cfg.gamma}")
    if cfg.sigma2 <= 0:
        raise ParameterError(f"sigma2 must be > 0, got {cfg.sigma2}")
    return cfg


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = PipelineConfig(**{f.name: getattr(base, f.name) for f in fields(PipelineConfig)}) \
        if base is not None else PipelineConfig()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ParameterError(f"config parse error: {err}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ParameterError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ParameterError(f"unknown config key [{section}] {key}")
            attr, kind = _SCHEMA[section][key]
            where = f"[{section}] {key}"
            if kind is bool:
                value = _parse_bool(raw, where)
            else:
                try:
                    value = kind(raw)
                except ValueError:
                    raise ParameterError(
                        f"{where}: expected {kind.__name__}, got {raw!r}")
            setattr(cfg, attr, value)
    return validate_config(cfg)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read an INI config; a relative style_image resolves against the
    config file's directory so echoed configs stay reusable."""
    with open(path, "r") as fh:
        cfg = parse_config(fh.read(), base)
    if cfg.style_image:
        p = Path(cfg.style_image)
        if not p.is_absolute():
            cfg.style_image = str(Path(path).parent / p)
    return cfg


def resolved_ini(cfg: PipelineConfig) -> str:
    """Canonical INI text with every key spelled out."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in _SCHEMA.items():
        parser[section] = {}
        for key, (attr, kind) in keys.items():
            value = getattr(cfg, attr)
            parser[section][key] = str(value).lower() if kind is bool else str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(resolved_ini(cfg))
