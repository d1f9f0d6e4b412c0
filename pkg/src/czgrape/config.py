"""Run configuration: TOML files with unit-suffixed keys.

A config has up to six sections::

    [device]      bus, parking, coupling and anharmonicity of both qubits
    [pulse]       gate time, pixel duration, buffers
    [optimizer]   targets, iteration cap, filter, initial pulse, seed
    [scan.<kind>] grids for qsl, noise, calibration, timing, params
    [jc]          three-level Jaynes-Cummings analysis
    [output]      directory and basename

Unknown sections or keys are rejected.  Grids are either explicit lists or
tables ``{start, stop, num}`` (inclusive linspace) or ``{start, stop, step}``
(inclusive arange).  Shipped presets live in ``czgrape/presets``.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from .model import DeviceParams, TabulatedAnharmonicity
from .optimizer import INITIAL_KINDS, OptimizationConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


NUMBER = (int, float)


def _is_number(v):
    return isinstance(v, NUMBER) and not isinstance(v, bool)


def _pair(v):
    return isinstance(v, list) and len(v) == 2 and all(_is_number(x) for x in v)


def _grid_spec(v):
    if isinstance(v, list):
        return len(v) > 0 and all(_is_number(x) for x in v)
    if isinstance(v, dict):
        keys = set(v)
        return keys in ({"start", "stop", "num"}, {"start", "stop", "step"}) and all(
            _is_number(x) for x in v.values()
        )
    return False


def _pos(v):
    return _is_number(v) and v > 0


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _str(v):
    return isinstance(v, str)


def _bool(v):
    return isinstance(v, bool)


def _path_pair(v):
    return isinstance(v, list) and len(v) == 2 and all(isinstance(x, str) for x in v)


SCHEMA = {
    "device": {
        "omega_b_ghz": (_pos, "positive number"),
        "omega_park_ghz": (_pair, "pair of numbers"),
        "g_mhz": (_pair, "pair of numbers"),
        "swap_time_ns": (_pair, "pair of numbers"),
        "anharmonicity_mhz": (_pair, "pair of numbers"),
        "anharmonicity_table_csv": (_path_pair, "pair of paths ('' for constant)"),
        "anharmonicity_order": (lambda v: v in (1, 3), "1 or 3"),
        "dimensionless": (_bool, "boolean"),
        "anharmonicity_ratio": (_pair, "pair of numbers"),
        "g_ratio": (_pos, "positive number"),
        "park_factor": (_pos, "positive number"),
    },
    "pulse": {
        "gate_time_ns": (_pos, "positive number"),
        "gate_time_tg": (_pos, "positive number"),
        "dt_ns": (_pos, "positive number"),
        "n_buffer": (_nonneg_int, "non-negative integer"),
        "parking_detuning_ghz": (_pair, "pair of numbers"),
    },
    "optimizer": {
        "target_error": (_pos, "positive number"),
        "max_iterations": (_nonneg_int, "non-negative integer"),
        "gtol": (_pos, "positive number"),
        "filter_sigma_ns": (_pos, "positive number"),
        "initial": (lambda v: v in INITIAL_KINDS, f"one of {INITIAL_KINDS}"),
        "fred": (lambda v: v in (1, 2), "1 or 2"),
        "seed": (_nonneg_int, "non-negative integer"),
        "initial_detuning_ghz": (_pair, "pair of numbers"),
        "initial_amplitude_ghz": (_pos, "positive number"),
        "initial_jitter_ghz": (lambda v: _is_number(v) and v >= 0, "non-negative number"),
        "initial_step_ghz": (_pos, "positive number"),
    },
    "scan.qsl": {
        "gate_times_ns": (_grid_spec, "grid"),
        "restarts": (_nonneg_int, "non-negative integer"),
        "max_iterations": (_nonneg_int, "non-negative integer"),
        "success_error": (_pos, "positive number"),
    },
    "scan.noise": {
        "pulse_csv": (_str, "path"),
        "relative_sigmas": (_grid_spec, "grid"),
        "n_samples": (lambda v: _nonneg_int(v) and v >= 1, "positive integer"),
        "seed": (_nonneg_int, "non-negative integer"),
    },
    "scan.calibration": {
        "pulse_csv": (_str, "path"),
        "offsets1_ghz": (_grid_spec, "grid"),
        "offsets2_ghz": (_grid_spec, "grid"),
    },
    "scan.timing": {
        "pulse_csv": (_str, "path"),
        "delays_ns": (_grid_spec, "grid"),
    },
    "scan.params": {
        "pulse_csv": (_str, "path"),
        "rel_errors_g1": (_grid_spec, "grid"),
        "rel_errors_delta1": (_grid_spec, "grid"),
    },
    "jc": {
        "omega_b_ghz": (_pos, "positive number"),
        "g_mhz": (lambda v: _is_number(v) and v >= 0, "non-negative number"),
        "swap_time_ns": (_pos, "positive number"),
        "anharmonicity_mhz": (
            lambda v: isinstance(v, list) and len(v) > 0 and all(_is_number(x) for x in v),
            "list of numbers",
        ),
        "detunings_ghz": (_grid_spec, "grid"),
        "n_samples": (lambda v: _nonneg_int(v) and v >= 2, "integer >= 2"),
    },
    "output": {
        "dir": (_str, "path"),
        "basename": (_str, "string"),
        "plot_stubs": (_bool, "boolean"),
    },
}

SCAN_KINDS = ("qsl", "noise", "calibration", "timing", "params")
PRESETS = ("table1", "dimensionless", "asym-anharm", "asym-anharm-mirrored", "jc-fig3")


def _flatten(raw: dict) -> dict:
    """``{"scan": {"qsl": {...}}}`` -> ``{"scan.qsl": {...}}``."""
    out = {}
    for name, body in raw.items():
        if name == "scan":
            if not isinstance(body, dict):
                raise ConfigError("[scan] must contain subsections")
            for kind, sub in body.items():
                out[f"scan.{kind}"] = sub
        else:
            out[name] = body
    return out


def validate(cfg: dict) -> dict:
    """Check sections, keys and value types; returns ``cfg``."""
    for section, body in cfg.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            check, expected = SCHEMA[section][key]
            if not check(value):
                raise ConfigError(f"[{section}] {key} = {value!r}: expected {expected}")
    dev = cfg.get("device", {})
    if "g_mhz" in dev and "swap_time_ns" in dev:
        raise ConfigError("[device] give either g_mhz or swap_time_ns, not both")
    pulse = cfg.get("pulse", {})
    if "gate_time_ns" in pulse and "gate_time_tg" in pulse:
        raise ConfigError("[pulse] give either gate_time_ns or gate_time_tg, not both")
    jc = cfg.get("jc", {})
    if "g_mhz" in jc and "swap_time_ns" in jc:
        raise ConfigError("[jc] give either g_mhz or swap_time_ns, not both")
    return cfg


def parse_override(text: str) -> tuple[list[str], Any]:
    """``section.key=value`` with a TOML value; bare words are taken as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    path = key.strip().split(".")
    if len(path) < 2 or not all(path):
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        parsed = tomli.loads(f"v = {value.strip()}")["v"]
    except tomli.TOMLDecodeError:
        parsed = value.strip()
    return path, parsed


# setting one key of a pair through an override drops the other
EXCLUSIVE = {
    "gate_time_ns": "gate_time_tg",
    "gate_time_tg": "gate_time_ns",
    "g_mhz": "swap_time_ns",
    "swap_time_ns": "g_mhz",
}


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        section = cfg.setdefault(".".join(path[:-1]), {})
        if not isinstance(section, dict):
            raise ConfigError(f"cannot override inside non-table {'.'.join(path[:-1])}")
        section.pop(EXCLUSIVE.get(path[-1], ""), None)
        section[path[-1]] = value
    return cfg


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return Path(str(resources.files("czgrape") / "presets" / f"{name}.toml"))


def load_config(source, overrides=None) -> dict:
    """Read, override and validate a config.

    ``source`` is a TOML path or a preset name.  Relative paths inside the
    file are resolved against its directory and recorded under ``_base_dir``.
    """
    path = Path(source)
    if not path.exists():
        if str(source) in PRESETS:
            path = preset_path(str(source))
        else:
            raise ConfigError(f"config file {source} not found")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = validate(apply_overrides(_flatten(raw), overrides))
    cfg["_base_dir"] = str(path.parent.resolve())
    return cfg


def resolve_path(cfg: dict, value: str) -> Path:
    """Absolute paths as given; relative ones against the working directory
    if they exist there, else against the config file's directory."""
    p = Path(value)
    if p.is_absolute() or p.exists():
        return p
    return Path(cfg.get("_base_dir", ".")) / p


def grid(spec) -> np.ndarray:
    """Expand a grid spec into an array."""
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if "num" in spec:
        return np.linspace(spec["start"], spec["stop"], int(spec["num"]))
    step = float(spec["step"])
    if step == 0:
        raise ConfigError("grid step must be non-zero")
    n = int(np.floor((spec["stop"] - spec["start"]) / step + 1e-9)) + 1
    if n < 1:
        raise ConfigError(f"empty grid {spec}")
    return spec["start"] + step * np.arange(n)


def device_from_config(cfg: dict) -> DeviceParams:
    dev = cfg.get("device")
    if not dev:
        raise ConfigError("missing [device] section")
    if dev.get("dimensionless", False):
        extra = set(dev) - {"dimensionless", "omega_b_ghz", "anharmonicity_ratio", "g_ratio", "park_factor"}
        if extra:
            raise ConfigError(f"[device] keys {sorted(extra)} do not apply to a dimensionless device")
        kwargs = {}
        if "omega_b_ghz" in dev:
            kwargs["omega_b"] = dev["omega_b_ghz"]
        if "anharmonicity_ratio" in dev:
            kwargs["anharmonicity_ratio"] = tuple(dev["anharmonicity_ratio"])
        for key in ("g_ratio", "park_factor"):
            if key in dev:
                kwargs[key] = dev[key]
        return DeviceParams.dimensionless(**kwargs)
    for key in ("omega_b_ghz", "omega_park_ghz"):
        if key not in dev:
            raise ConfigError(f"[device] missing {key}")
    if "g_mhz" in dev:
        g = tuple(x * 1e-3 for x in dev["g_mhz"])
    elif "swap_time_ns" in dev:
        if min(dev["swap_time_ns"]) <= 0:
            raise ConfigError("[device] swap times must be positive")
        g = tuple(1.0 / (2.0 * t) for t in dev["swap_time_ns"])
    else:
        raise ConfigError("[device] needs g_mhz or swap_time_ns")
    tables = dev.get("anharmonicity_table_csv", ["", ""])
    constants = dev.get("anharmonicity_mhz")
    anharm = []
    for k in range(2):
        if tables[k]:
            path = resolve_path(cfg, tables[k])
            if not path.exists():
                raise ConfigError(f"anharmonicity table {path} not found")
            try:
                anharm.append(TabulatedAnharmonicity.from_csv(path, dev.get("anharmonicity_order", 3)))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        elif constants is not None:
            anharm.append(constants[k] * 1e-3)
        else:
            raise ConfigError(f"[device] no anharmonicity for qubit {k + 1}")
    try:
        return DeviceParams(dev["omega_b_ghz"], tuple(dev["omega_park_ghz"]), g, tuple(anharm))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def gate_time_ns(cfg: dict, params: DeviceParams) -> float:
    pulse = cfg.get("pulse", {})
    if "gate_time_ns" in pulse:
        return float(pulse["gate_time_ns"])
    if "gate_time_tg" in pulse:
        if params.g[0] != params.g[1]:
            raise ConfigError("gate_time_tg needs equal couplings")
        return float(pulse["gate_time_tg"]) / (2.0 * np.pi * params.g[0])
    raise ConfigError("[pulse] needs gate_time_ns or gate_time_tg")


def optimization_config(cfg: dict, params: DeviceParams, seed: Optional[int] = None) -> OptimizationConfig:
    pulse = cfg.get("pulse", {})
    opt = cfg.get("optimizer", {})
    kwargs = dict(
        gate_time=gate_time_ns(cfg, params),
        dt=pulse.get("dt_ns", 0.5),
        n_buffer=pulse.get("n_buffer", 5),
        parking=tuple(pulse["parking_detuning_ghz"]) if "parking_detuning_ghz" in pulse else None,
        target_error=opt.get("target_error", 1e-4),
        max_iterations=opt.get("max_iterations", 5000),
        gtol=opt.get("gtol", 1e-10),
        filter_sigma=opt.get("filter_sigma_ns"),
        initial=opt.get("initial", "random"),
        seed=opt.get("seed", 0) if seed is None else seed,
        fred=opt.get("fred", 2),
        initial_detuning=tuple(opt["initial_detuning_ghz"]) if "initial_detuning_ghz" in opt else None,
        initial_amplitude=opt.get("initial_amplitude_ghz"),
        initial_jitter=opt.get("initial_jitter_ghz", 0.01),
        initial_step=opt.get("initial_step_ghz", 0.01),
    )
    try:
        return OptimizationConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def resolved(cfg: dict) -> dict:
    """The config as a nested, JSON-ready dict, private keys dropped."""
    out: dict = {}
    for section, body in cfg.items():
        if section.startswith("_"):
            continue
        if section.startswith("scan."):
            out.setdefault("scan", {})[section[5:]] = copy.deepcopy(body)
        else:
            out[section] = copy.deepcopy(body)
    return out


def dump_resolved(cfg: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(resolved(cfg), indent=2, sort_keys=True) + "\n")
    return path
