"""Pipeline configuration: flat `section.key = value` text with `#` comments.

Every key is optional; omitted values take the reference-device defaults.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

from .apparatus import ApparatusParams, ParamSigmas
from .emitter import PowerModel
from .entropy import DEFAULT_EPSILON
from .extract import DEFAULT_BLOCK_BITS, HashSeed
from .g2 import REFERENCE_G2, G2Model


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    power_mw: float = 0.026
    power_model: PowerModel = field(default_factory=PowerModel)
    apparatus: ApparatusParams = field(default_factory=ApparatusParams)
    sigmas: ParamSigmas = field(default_factory=ParamSigmas)
    duration_s: float = 60.0
    seed: int = 1729
    bin_ps: int = 500
    max_lag_ns: float = 1500.0
    models: tuple = (1, 2, 3)
    epsilon: float = DEFAULT_EPSILON
    k_sigma: float | None = None
    include_crossing_shift: bool = False
    g2_source: str = "config"  # "config" or "fit"
    g2: G2Model = REFERENCE_G2
    n_block: int = DEFAULT_BLOCK_BITS
    extract_model: int = 1
    extract_seed: HashSeed = field(default_factory=lambda: HashSeed.from_int(0x5EED))
    tags_path: str | None = None  # analyse this file instead of simulating
    window_s: float = 1.0
    sweep_max_mw: float = 0.3
    sweep_points: int = 61

    def to_dict(self) -> dict:
        return {
            "power_mw": self.power_mw,
            "power_model": self.power_model.to_dict(),
            "apparatus": self.apparatus.to_dict(),
            "sigmas": self.sigmas.to_dict(),
            "duration_s": self.duration_s,
            "seed": self.seed,
            "bin_ps": self.bin_ps,
            "max_lag_ns": self.max_lag_ns,
            "models": list(self.models),
            "epsilon": self.epsilon,
            "k_sigma": self.k_sigma,
            "include_crossing_shift": self.include_crossing_shift,
            "g2_source": self.g2_source,
            "g2": self.g2.to_dict(),
            "n_block": self.n_block,
            "extract_model": self.extract_model,
            "extract_seed_fingerprint": self.extract_seed.fingerprint,
            "tags_path": self.tags_path,
            "window_s": self.window_s,
            "sweep_max_mw": self.sweep_max_mw,
            "sweep_points": self.sweep_points,
        }


_POW = re.compile(r"^\s*([0-9.eE+-]+)\s*\^\s*([0-9.eE+-]+)\s*$")


def parse_number(text: str) -> float:
    """Float, also accepting `base^exponent` such as 2^-100."""
    m = _POW.match(text)
    try:
        if m:
            return float(m.group(1)) ** float(m.group(2))
        return float(text)
    except (ValueError, OverflowError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def parse_models(text: str) -> tuple:
    if text.strip() == "all":
        return (1, 2, 3)
    try:
        out = tuple(sorted({int(v) for v in text.replace(",", " ").split()}))
    except ValueError as exc:
        raise ConfigError(f"bad model list {text!r}") from exc
    if not out or any(m not in (1, 2, 3) for m in out):
        raise ConfigError(f"models must be drawn from 1, 2, 3: {text!r}")
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        out[key] = value
    return out


_TOP = {
    "power.mw": ("power_mw", parse_number),
    "sim.duration_s": ("duration_s", parse_number),
    "sim.seed": ("seed", lambda v: int(v, 0)),
    "hist.bin_ps": ("bin_ps", lambda v: int(v, 0)),
    "hist.max_lag_ns": ("max_lag_ns", parse_number),
    "entropy.models": ("models", parse_models),
    "entropy.epsilon": ("epsilon", parse_number),
    "entropy.k_sigma": ("k_sigma", parse_number),
    "entropy.include_crossing_shift": ("include_crossing_shift", _parse_bool),
    "g2.source": ("g2_source", str),
    "extract.n_block": ("n_block", lambda v: int(v, 0)),
    "extract.model": ("extract_model", lambda v: int(v, 0)),
    "extract.seed": ("extract_seed", HashSeed.from_hex),
    "io.tags": ("tags_path", str),
    "rates.window_s": ("window_s", parse_number),
    "sweep.max_mw": ("sweep_max_mw", parse_number),
    "sweep.points": ("sweep_points", lambda v: int(v, 0)),
}
_NESTED = {
    "power_model": PowerModel,
    "apparatus": ApparatusParams,
    "sigma": ParamSigmas,
    "g2": G2Model,
}


def config_from_mapping(values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    top, nested = {}, {k: {} for k in _NESTED}
    for key, raw in values.items():
        try:
            if key in _TOP:
                name, conv = _TOP[key]
                top[name] = conv(raw)
                continue
            section, _, name = key.partition(".")
            if section not in _NESTED or name not in {f.name for f in fields(_NESTED[section])}:
                raise ConfigError(f"unknown key {key}")
            nested[section][name] = parse_number(raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    app = nested["apparatus"]
    if "t" in app and "r" not in app:
        app["r"] = 1.0 - app["t"]
    elif "r" in app and "t" not in app:
        app["t"] = 1.0 - app["r"]
    try:
        apparatus = replace(base.apparatus, **app)
        sig = nested["sigma"]
        if "i_in" not in sig and "i_in" in app:
            sig["i_in"] = math.sqrt(apparatus.i_in)
        cfg = replace(
            base,
            power_model=replace(base.power_model, **nested["power_model"]),
            apparatus=apparatus,
            sigmas=replace(base.sigmas, **sig),
            g2=replace(base.g2, **nested["g2"]),
            **top,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    if cfg.power_mw < 0:
        raise ConfigError("power must be non-negative")
    if not cfg.duration_s > 0:
        raise ConfigError("duration must be positive")
    if cfg.bin_ps <= 0 or int(round(cfg.max_lag_ns * 1000)) % cfg.bin_ps:
        raise ConfigError("max_lag must be a positive multiple of the bin width")
    if not 0 < cfg.epsilon < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    if cfg.k_sigma is not None and cfg.k_sigma < 0:
        raise ConfigError("k_sigma must be non-negative")
    if cfg.g2_source not in ("config", "fit"):
        raise ConfigError("g2.source must be 'config' or 'fit'")
    if cfg.n_block <= 0 or cfg.n_block % 64:
        raise ConfigError("extract.n_block must be a positive multiple of 64")
    if cfg.extract_model not in (1, 2, 3):
        raise ConfigError("extract.model must be 1, 2 or 3")
    if cfg.window_s <= 0:
        raise ConfigError("rates.window_s must be positive")
    if cfg.sweep_points < 2 or cfg.sweep_max_mw <= 0:
        raise ConfigError("power sweep needs at least two points up to a positive power")


def load_config(path: str | None = None, base: PipelineConfig | None = None) -> PipelineConfig:
    if path is None:
        return base or PipelineConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(parse_config_text(text), base)
