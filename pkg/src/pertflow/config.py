"""TOML configuration: loading, overrides, hashing and object construction.

Sections: ``[operator] [coefficients] [initial] [noise] [grid] [sweep] [tolerances]``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientField, preset
from .noise import WienerDriver
from .operators import OperatorPair
from .solver import TimeGrid
from .spectral import BasisSpec, SpectralElement, mode_index

SECTIONS = ("operator", "coefficients", "initial", "noise", "grid", "sweep", "tolerances")


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict[str, Any] = {
    "operator": {"backend": "fourier", "K": 4, "m": 3},
    "coefficients": {"preset": "nemytskii"},
    "initial": {"modes": [[2, "cos", 1.0]]},
    "noise": {"seed": 20240611, "M": 8, "master_steps": 256, "T": 0.5},
    "grid": {"steps": 64},
    "sweep": {
        "eps": 0.1,
        "h": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
        "eps_list": [0.25, 0.125, 0.0625, 0.03125, 0.015625],
        "paths": 16,
        "p": 2.0,
        "order": 1,
        "k": 0,
    },
    "tolerances": {"slope_low": 0.8, "slope_high": 1.2},
}


def merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load(path: str | Path | None, base: dict | None = None) -> dict:
    """Read a TOML file and merge it over ``base`` (the shipped defaults if omitted)."""
    base = DEFAULT_CONFIG if base is None else base
    if path is None:
        return copy.deepcopy(base)
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return merge(base, data)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as TOML literals."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, _, name = key.strip().partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        cfg.setdefault(section, {})[name] = _parse_value(value.strip())
    return cfg


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _matrix(sec: dict, name: str) -> np.ndarray:
    if name in sec:
        return np.array(sec[name], dtype=float)
    path = sec.get(f"{name}_csv")
    if path is None:
        raise ConfigError(f"dense operator needs {name} or {name}_csv")
    try:
        with open(path, newline="") as fh:
            return np.array([[float(x) for x in row] for row in csv.reader(fh) if row])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {name}_csv {path}: {exc}") from exc


def build_operator(cfg: dict) -> OperatorPair:
    sec = cfg["operator"]
    backend = sec.get("backend", "fourier")
    m = int(sec.get("m", 3))
    alphas = sec.get("alphas")
    try:
        if backend == "fourier":
            return OperatorPair.fourier(int(sec.get("K", 4)), m, alphas, float(sec.get("g_scale", 1.0)))
        if backend == "dense":
            return OperatorPair.dense(_matrix(sec, "A"), _matrix(sec, "G"), m, alphas)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown operator backend {backend!r}")


def build_coefficients(cfg: dict, P: OperatorPair) -> CoefficientField:
    sec = dict(cfg["coefficients"])
    name = sec.pop("preset", "zero")
    try:
        return preset(name, P, int(cfg["noise"].get("M", 8)), sec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_initial(cfg: dict, basis: BasisSpec) -> SpectralElement:
    sec = cfg["initial"]
    if "coeffs" in sec:
        try:
            return SpectralElement(basis, np.array(sec["coeffs"], dtype=float))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    x = np.zeros(basis.dim)
    for entry in sec.get("modes", []):
        mode, part, amp = entry
        if basis.kind == "euclidean":
            part = "e"
        try:
            x[mode_index(basis, int(mode), part)] += float(amp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return SpectralElement(basis, x)


def build_driver(cfg: dict) -> WienerDriver:
    sec = cfg["noise"]
    try:
        return WienerDriver(int(sec["seed"]), int(sec.get("M", 8)), int(sec.get("master_steps", 256)),
                            float(sec.get("T", 1.0)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad noise section: {exc}") from exc


def build_grid(cfg: dict) -> TimeGrid:
    try:
        return TimeGrid(float(cfg["noise"].get("T", 1.0)), int(cfg["grid"].get("steps", 64)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
