"""Typed run configuration read from TOML with strict key checking.

Sections mirror the package modules. Frequencies are written in Hz and
converted to rad/s by the accessors that build simulation objects; pump
rates are plain rates in s^-1.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class Key:
    kind: str  # float, int, str, bool, floats, pairs, ints
    default: Any = None
    check: Callable[[Any], bool] | None = None
    hint: str = ""
    choices: tuple[str, ...] = ()


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _all(pred):
    return lambda xs: all(pred(x) for x in xs)


TRANSITION_KEYS = {
    "wavelength": Key("float", None, _pos, "nm, > 0"),
    "linewidth": Key("float", None, _pos, "Hz, > 0"),
    "strength": Key("float", None, _pos, "(e a0)^2, > 0"),
}

SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key("int", 0, _nonneg, ">= 0"),
        "label": Key("str", "run"),
    },
    "atom_model": {
        "scheme": Key("str", "13-level", choices=("13-level", "4-level")),
        "rabi_s": Key("float", 33.5e6, _nonneg, "Hz, >= 0"),
        "rabi_w": Key("float", 3.7e6, _nonneg, "Hz, >= 0"),
        "rabi_r": Key("float", 2.8e6, _nonneg, "Hz, >= 0"),
        "detuning_s": Key("float", 0.0, hint="Hz"),
        "detuning_w": Key("float", 0.0, hint="Hz"),
        "detuning_r": Key("float", 0.0, hint="Hz"),
        "polarization_s": Key("str", "y", choices=("x", "y", "z")),
        "polarization_w": Key("str", "y", choices=("x", "y", "z")),
        "polarization_r": Key("str", "y", choices=("x", "y", "z")),
        "probe_polarization": Key("str", "x", choices=("x", "y", "z")),
        "probe_rabi": Key("float", 1e3, _pos, "Hz, > 0"),
    },
    "liouvillian": {
        "pump_r": Key("float", 1.1e6, _nonneg, "s^-1, >= 0"),
        "pump_cd": Key("float", 1e7, _nonneg, "s^-1, >= 0"),
        "b_s": Key("float", 0.0, _nonneg, "Hz, >= 0"),
        "b_w": Key("float", 0.0, _nonneg, "Hz, >= 0"),
        "b_r": Key("float", 25e6, _nonneg, "Hz, >= 0"),
        "density": Key("float", None, _pos, "m^-3, > 0 (default: vapor density at T)"),
        "dephasing_ab": Key("float", 0.0, _nonneg, "Hz, >= 0"),
        "check_linear": Key("bool", False),
    },
    "doppler": {
        "enabled": Key("bool", False),
        "temperature": Key("float", 300.0, _pos, "K, > 0"),
        "nodes": Key("int", 24, _pos, ">= 1"),
        "method": Key("str", "line", choices=("line", "gauss-hermite")),
    },
    "spectrum": {
        "detuning_min": Key("float", -1e6, hint="Hz"),
        "detuning_max": Key("float", 1e6, hint="Hz"),
        "points": Key("int", 201, _pos, ">= 1"),
        "pump_rates": Key("floats", None, _all(_nonneg), "s^-1; default: liouvillian.pump_r"),
    },
    "noise_sweep": {
        "mode": Key("str", "linewidth", choices=("linewidth", "pump")),
        "linewidths": Key("floats", [0.0, 8e3, 16e3, 24e3, 32e3], _all(_nonneg), "Hz, b_s = b_w"),
        "temperatures": Key("floats", [290.0, 300.0, 310.0], _all(_pos), "K"),
        "pump_rates": Key("floats", [0.0, 5e5, 1e6, 2e6, 4e6], _all(_nonneg), "s^-1"),
    },
    "laser_power": {
        "Q": Key("float", 198e6, _pos, "> 0"),
        "overlap_ratio": Key("float", 0.01, lambda x: 0 < x <= 1, "in (0, 1]"),
        "mode_waist": Key("float", 2e-3, _pos, "m, > 0"),
        "round_trip_length": Key("float", 0.8, _pos, "m, > 0"),
        "area": Key("float", 4e-6, _pos, "m^2, > 0"),
        "sigma_omega": Key("float", 440e6, _pos, "Hz, > 0"),
        "order": Key("int", 2, _pos, ">= 1"),
        "pump_rates": Key("floats", [1e6, 2e6, 4e6, 8e6], _all(_nonneg), "s^-1"),
        "linewidth_sets": Key("pairs", [[45e3, 21.6e3], [50e3, 24e3], [55e3, 26.4e3]],
                              lambda xs: all(a >= 0 and b >= 0 for a, b in xs), "[[b_s, b_w], ...] in Hz"),
        "b_s_grid": Key("floats", [0.0, 25e3, 50e3], _all(_nonneg), "Hz"),
        "b_w_grid": Key("floats", [0.0, 12e3, 24e3], _all(_nonneg), "Hz"),
        "r_max": Key("float", 1e8, _pos, "s^-1, > 0"),
        "iterations": Key("int", 40, _pos, ">= 1"),
    },
    "gain_field": {
        "waist": Key("float", 2e-3, _pos, "m, > 0"),
        "power_s": Key("float", 0.2, _nonneg, "W, >= 0"),
        "power_w": Key("float", 1.4e-3, _nonneg, "W, >= 0"),
        "half_width": Key("floats", [4e-3, 4e-3, 4e-3], lambda xs: len(xs) == 3 and all(x > 0 for x in xs),
                          "[hx, hy, hz] in m"),
        "shape": Key("ints", [24, 24, 24], lambda xs: len(xs) == 3 and all(x >= 2 for x in xs),
                     "[nx, ny, nz], each >= 2"),
        "table_size": Key("int", 64, lambda x: x >= 2, ">= 2"),
        "table_method": Key("str", "linear", choices=("linear", "cubic")),
    },
    "cavity_optics": {
        "arm": Key("float", 0.2, _pos, "m, > 0"),
        "mirror_radius": Key("float", 1.0, _pos, "m, > 0"),
        "aperture": Key("float", 1.38e-3, _pos, "m, > 0"),
        "medium_length": Key("float", 0.05, _nonneg, "m, >= 0"),
        "slices": Key("int", 32, _pos, ">= 1"),
        "loss_factor": Key("float", 1.0, lambda x: 0 < x <= 1, "in (0, 1]"),
        "grid": Key("int", 256, lambda x: x >= 8 and not x & (x - 1), "power of two"),
        "window": Key("float", None, _pos, "m, > 0 (default: 4 x aperture)"),
        "modes": Key("int", 4, _pos, ">= 1"),
        "krylov": Key("int", 60, lambda x: x >= 3, ">= 3"),
        "restarts": Key("int", 20, _pos, ">= 1"),
        "tol": Key("float", 1e-8, _pos, "> 0"),
        "sampling": Key("str", "midpoint", choices=("midpoint", "printed")),
        "loaded": Key("bool", True),
        "drive_waists": Key("floats", [2e-3], _all(_pos), "m; w0 sweep of the drive beams"),
    },
}


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``key`` in ``[section]`` (or of the header when key is None)."""
    current = None
    header = re.compile(r"^\s*\[\s*([^\]\s]+)\s*\]")
    keyline = re.compile(r"^\s*([\"']?)([A-Za-z0-9_\-]+)\1\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            k = keyline.match(line)
            if k and k.group(2) == key:
                return no
    return None


def _coerce(value, spec: Key, where: str):
    def num(x, integer=False):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise TypeError
        if integer and not isinstance(x, int):
            raise TypeError
        return int(x) if integer else float(x)

    try:
        if spec.kind == "float":
            return num(value)
        if spec.kind == "int":
            return num(value, integer=True)
        if spec.kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if spec.kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if spec.kind in ("floats", "ints"):
            if not isinstance(value, list):
                raise TypeError
            return [num(x, spec.kind == "ints") for x in value]
        if spec.kind == "pairs":
            if not isinstance(value, list) or any(not isinstance(p, list) or len(p) != 2 for p in value):
                raise TypeError
            return [[num(a), num(b)] for a, b in value]
    except TypeError:
        raise ConfigError(f"{where}: expected {spec.kind}, got {type(value).__name__} {value!r}") from None
    raise AssertionError(spec.kind)


@dataclass
class RunConfig:
    """Validated configuration: section -> key -> value, defaults filled in."""

    values: dict[str, dict[str, Any]]
    transitions: dict[str, dict[str, float]] = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def echo(self) -> list[str]:
        """Deterministic ``section.key = value`` lines covering every setting."""
        lines = []
        for sec in sorted(self.values):
            for key in sorted(self.values[sec]):
                lines.append(f"{sec}.{key} = {json.dumps(self.values[sec][key])}")
        for tr in sorted(self.transitions):
            for key in sorted(self.transitions[tr]):
                lines.append(f"atom_model.transitions.{tr}.{key} = {json.dumps(self.transitions[tr][key])}")
        return lines

    def to_dict(self) -> dict:
        return {"values": self.values, "transitions": self.transitions}

    def to_toml(self) -> str:
        """TOML text that parses back to the same configuration."""
        out = []
        for sec in SCHEMA:
            out.append(f"[{sec}]")
            for key, val in self.values[sec].items():
                if val is not None:
                    out.append(f"{key} = {json.dumps(val)}")
            out.append("")
        for tr, keys in self.transitions.items():
            out.append(f"[atom_model.transitions.{tr}]")
            out.extend(f"{k} = {json.dumps(v)}" for k, v in keys.items())
            out.append("")
        return "\n".join(out)


def parse_config(text: str, source: str | None = None) -> RunConfig:
    """Parse and validate TOML text; unknown sections or keys are errors."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", int(m.group(1)) if m else None, source) from None

    values: dict[str, dict[str, Any]] = {}
    transitions: dict[str, dict[str, float]] = {}
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", _locate(text, sec), source)
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{sec}] must be a table", _locate(text, sec), source)
        out = {}
        for key, val in given.items():
            if sec == "atom_model" and key == "transitions":
                transitions = _parse_transitions(val, text, source)
                continue
            if key not in keys:
                raise ConfigError(f"unknown key '{key}' in [{sec}]", _locate(text, sec, key), source)
            spec = keys[key]
            line = _locate(text, sec, key)
            try:
                v = _coerce(val, spec, f"{sec}.{key}")
            except ConfigError as exc:
                raise ConfigError(str(exc), line, source) from None
            if spec.choices and v not in spec.choices:
                raise ConfigError(f"{sec}.{key} = {v!r} not one of {spec.choices}", line, source)
            if spec.check is not None and not spec.check(v):
                raise ConfigError(f"{sec}.{key} = {v!r} out of range ({spec.hint})", line, source)
            out[key] = v
        for key, spec in keys.items():
            out.setdefault(key, spec.default)
        values[sec] = out
    _cross_checks(values, text, source)
    return RunConfig(values, transitions, source)


def _parse_transitions(table, text, source) -> dict[str, dict[str, float]]:
    if not isinstance(table, dict):
        raise ConfigError("atom_model.transitions must be a table", None, source)
    out = {}
    for name, keys in table.items():
        sec = f"atom_model.transitions.{name}"
        if name not in ("ab", "ca", "cd", "ce"):
            raise ConfigError(f"unknown transition '{name}'", _locate(text, sec), source)
        if not isinstance(keys, dict):
            raise ConfigError(f"[{sec}] must be a table", _locate(text, sec), source)
        vals = {}
        for key, val in keys.items():
            if key not in TRANSITION_KEYS:
                raise ConfigError(f"unknown key '{key}' in [{sec}]", _locate(text, sec, key), source)
            spec = TRANSITION_KEYS[key]
            v = _coerce(val, spec, f"{sec}.{key}")
            if not spec.check(v):
                raise ConfigError(f"{sec}.{key} = {v!r} out of range ({spec.hint})", _locate(text, sec, key), source)
            vals[key] = v
        out[name] = vals
    return out


def _cross_checks(values, text, source) -> None:
    sp = values["spectrum"]
    if sp["points"] > 1 and not sp["detuning_max"] > sp["detuning_min"]:
        raise ConfigError("spectrum.detuning_max must exceed detuning_min",
                          _locate(text, "spectrum", "detuning_max"), source)
    for sec, key in (("spectrum", "pump_rates"), ("noise_sweep", "linewidths"), ("noise_sweep", "temperatures"),
                     ("noise_sweep", "pump_rates"), ("laser_power", "pump_rates"), ("laser_power", "b_s_grid"),
                     ("laser_power", "b_w_grid"), ("laser_power", "linewidth_sets"),
                     ("cavity_optics", "drive_waists")):
        if values[sec][key] is not None and len(values[sec][key]) == 0:
            raise ConfigError(f"{sec}.{key} must not be empty", _locate(text, sec, key), source)
    cav = values["cavity_optics"]
    if not cav["arm"] > cav["medium_length"]:
        raise ConfigError("cavity_optics.arm must exceed medium_length",
                          _locate(text, "cavity_optics", "medium_length"), source)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(p)) from None
    return parse_config(text, str(p))


def default_config() -> RunConfig:
    return parse_config("")


__all__ = ["ConfigError", "Key", "RunConfig", "SCHEMA", "default_config", "load_config", "parse_config"]
