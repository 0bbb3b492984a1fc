"""Run configuration: an INI file with one section per module.

Every key has a type and a default. ``--set section.key=value`` overrides
are applied on top of the file before validation, and any problem is
reported with the offending ``section.key`` path.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .adaptive import CRITERIA
from .distributions import format_distribution, parse_distribution


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def conv(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {t!r}")
        return t

    return conv


def _positive(kind):
    def conv(text: str):
        v = kind(text)
        if not v > 0:
            raise ValueError(f"must be positive, got {text!r}")
        return v

    return conv


def _nonneg(kind):
    def conv(text: str):
        v = kind(text)
        if not v >= 0:
            raise ValueError(f"must be non-negative, got {text!r}")
        return v

    return conv


def _optional(conv):
    def wrapped(text: str):
        return None if text.strip() == "" else conv(text)

    return wrapped


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _distribution(text: str):
    return parse_distribution(text)


# section -> key -> (converter, default text); an empty default means "unset"
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "run": {
        "seed": (_nonneg(int), "1"),
        "workers": (_positive(int), "1"),
        "indicator": (_choice("true", "plugin", "expected"), "true"),
    },
    "scenario": {
        "kind": (_choice("lane_change", "tail"), "lane_change"),
        "natural": (_optional(_distribution), ""),
        "threshold": (float, "3.0"),
        "lead_speed": (_positive(float), "10.0"),
    },
    "simulator": {
        "dt": (_positive(float), "0.01"),
        "horizon": (_positive(float), "10.0"),
        "acc_time_headway": (_positive(float), "1.5"),
        "acc_gain_spacing": (_nonneg(float), "0.1"),
        "acc_gain_speed": (_nonneg(float), "0.5"),
        "aeb_ttc_trigger": (_nonneg(float), "1.5"),
        "aeb_decel": (_positive(float), "6.0"),
        "ego_accel_min": (float, "-6.0"),
        "ego_accel_max": (float, "2.0"),
        "range_event_threshold": (_positive(float), "2.0"),
        "serialize": (_bool, "false"),
    },
    "event": {
        "gamma": (float, "0.5"),
    },
    "kriging": {
        "design": (_optional(str), ""),
        "model": (_optional(str), ""),
        "beta": (_optional(float), ""),
        "tau2": (_positive(float), "0.01"),
        "theta": (_positive(float), "50.0"),
        "nugget": (_nonneg(float), "0.0"),
        "fit": (_choice("none", "mle"), "none"),
        "bounds": (_choice("none", "design"), "design"),
    },
    "estimate": {
        "n": (_positive(int), "100000"),
    },
    "is": {
        "n": (_positive(int), "10000"),
        "f_star": (_optional(_distribution), ""),
        "trace": (_bool, "false"),
    },
    "ce": {
        "theta0": (_optional(_distribution), ""),
        "n_per_iter": (_positive(int), "2000"),
        "max_iter": (_positive(int), "10"),
        "tol": (_positive(float), "1e-3"),
        "smoothing": (_positive(float), "0.7"),
        "update_sd": (_bool, "false"),
    },
    "adapt": {
        "criterion": (_choice(*CRITERIA), "pnt1"),
        "budget": (_positive(int), "10"),
        "candidates": (_choice("grid", "distribution"), "grid"),
        "grid_points": (_positive(int), "21"),
        "lower": (_optional(_floats), ""),
        "upper": (_optional(_floats), ""),
        "n_candidates": (_positive(int), "200"),
        "pool_size": (_positive(int), "1000"),
        "quad_nodes": (_positive(int), "15"),
    },
    "simulate": {
        "input": (_optional(str), ""),
    },
}

# keys whose value names an input file that must exist when set
INPUT_FILES = ("kriging.design", "kriging.model", "simulate.input")


@dataclass
class Config:
    values: dict[str, dict[str, Any]]
    raw: dict[str, dict[str, str]]
    base_dir: Path

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def path(self, dotted: str) -> Path | None:
        v = self.get(dotted)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def canonical(self) -> dict[str, dict[str, str]]:
        """Resolved values as normalized text, the basis of the config hash."""
        out = {}
        for section, keys in self.values.items():
            out[section] = {}
            for key, v in keys.items():
                if v is None:
                    text = ""
                elif isinstance(v, bool):
                    text = "true" if v else "false"
                elif isinstance(v, float):
                    text = repr(v)
                elif isinstance(v, list):
                    text = " ".join(repr(float(t)) for t in v)
                elif hasattr(v, "log_density"):
                    text = format_distribution(v)
                else:
                    text = str(v)
                out[section][key] = text
        return out

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _split_override(item: str) -> tuple[str, str, str]:
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    dotted, value = item.split("=", 1)
    dotted = dotted.strip()
    if "." not in dotted:
        raise ConfigError(dotted, "override key must be section.key")
    section, key = dotted.split(".", 1)
    return section, key, value.strip()


def load_config(path=None, overrides=(), check_files: bool = True) -> Config:
    """Read ``path`` (optional), apply ``section.key=value`` overrides and validate."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as err:
            raise ConfigError("config", f"cannot parse {path}: {err}") from err
        base_dir = path.resolve().parent

    raw: dict[str, dict[str, str]] = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            raw[section][key] = value
    for item in overrides:
        section, key, value = _split_override(item)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"{section}.{key}", "unknown key")
        raw[section][key] = value

    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, _) in keys.items():
            try:
                values[section][key] = conv(raw[section][key])
            except (ValueError, TypeError) as err:
                raise ConfigError(f"{section}.{key}", str(err)) from err

    cfg = Config(values, raw, base_dir)
    _cross_checks(cfg)
    if check_files:
        for dotted in INPUT_FILES:
            p = cfg.path(dotted)
            if p is not None and not p.is_file():
                raise ConfigError(dotted, f"file not found: {p}")
    return cfg


def _cross_checks(cfg: Config) -> None:
    sim = cfg["simulator"]
    if not sim["ego_accel_min"] < 0 < sim["ego_accel_max"]:
        raise ConfigError("simulator.ego_accel_min", "need ego_accel_min < 0 < ego_accel_max")
    if sim["dt"] >= sim["horizon"]:
        raise ConfigError("simulator.dt", "must be smaller than the horizon")
    if not 0 < cfg["ce"]["smoothing"] <= 1:
        raise ConfigError("ce.smoothing", "must be in (0, 1]")
    if cfg["adapt"]["quad_nodes"] < 3:
        raise ConfigError("adapt.quad_nodes", "must be >= 3")
    lo, hi = cfg["adapt"]["lower"], cfg["adapt"]["upper"]
    if (lo is None) != (hi is None):
        raise ConfigError("adapt.lower" if lo is None else "adapt.upper", "lower and upper must be set together")
    if lo is not None and (len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi))):
        raise ConfigError("adapt.upper", "must have the length of adapt.lower and exceed it coordinate-wise")
