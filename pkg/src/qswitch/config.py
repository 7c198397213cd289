"""Experiment configuration in human units.

Field names carry their unit.  Frequencies given in GHz/MHz are ordinary
frequencies; the 2 pi factor is applied exactly once, here, when building
a :class:`NetworkSpec`.  Times are ns or us, lengths m.

A config (or an emitted manifest, which embeds the resolved config under
``"config"``) is read with a YAML loader, so plain JSON works too.
"""
from __future__ import annotations

import copy
import math
from pathlib import Path

import jsonschema
import yaml

from .network import C_LIGHT, TWO_PI, NetworkSpec
from .noise import BootstrapSpec, NoiseSpec
from .protocols import w_shift_schedule

CONFIG_SCHEMA_VERSION = 1

_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}
_pos_int = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omega_tr_ghz": {"type": "number", "exclusiveMinimum": 0},
                "kappa_mhz": {"type": "number", "exclusiveMinimum": 0},
                "length_m": {"type": "number", "exclusiveMinimum": 0},
                "l_c_m": {"type": "number", "exclusiveMinimum": 0},
                "chi_over_kappa": {
                    "oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "number", "minimum": 0}}]
                },
                "n_nodes": {"type": "integer", "minimum": 2},
                "mode_window_over_kappa": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "n_modes": {"type": ["integer", "null"], "minimum": 1},
                "v_g_over_c": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "lamb_shift_compensation": {"type": "boolean"},
                "far_band_correction": {"type": "boolean"},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t1_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "t1_switch_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "p_loss": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
                "attenuation_db_per_km": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_ns": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
                "n": {"type": "integer", "minimum": 2},
                "order": {"enum": ["left_first", "right_first", "simultaneous_split"]},
                "switch_bits": {"type": "array", "items": {"enum": [0, 1]}, "minItems": 2, "maxItems": 2},
                "target": {"enum": ["qst", "bell", "ghz", "w"]},
                "chi_values": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "t1_us_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "tau_grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"start": _num, "stop": _num, "step": {"type": "number", "exclusiveMinimum": 0}},
                },
            },
        },
        "monte_carlo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trajectories": _pos_int,
                "resamples": _pos_int,
                "sample_size": _pos_int,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": ["string", "null"]},
                "formats": {"type": "array", "items": {"enum": ["csv"]}},
            },
        },
    },
}

DEFAULTS = {
    "network": {
        "omega_tr_ghz": 8.0,
        "kappa_mhz": 10.0,
        "length_m": 10.0,
        "l_c_m": 0.0286,
        "chi_over_kappa": None,
        "n_nodes": 3,
        "mode_window_over_kappa": 40.0,
        "n_modes": None,
        "v_g_over_c": None,
        "lamb_shift_compensation": True,
        "far_band_correction": True,
    },
    "noise": {"t1_us": None, "t1_switch_us": None, "p_loss": None, "attenuation_db_per_km": None},
    "protocol": {
        "tau_ns": "auto",
        "n": 3,
        "order": "left_first",
        "switch_bits": [1, 1],
        "target": "bell",
        "chi_values": [0.5, 1.0, 2.0, 5.0, 10.0],
        "t1_us_values": [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0],
        "tau_grid": {"start": 6.0, "stop": 40.0, "step": 1.0},
    },
    "monte_carlo": {"trajectories": 1000, "resamples": 100, "sample_size": 500, "seed": 0},
    "output": {"directory": None, "formats": ["csv"]},
}

DEFAULT_P_LOSS = 1.2e-3


class ConfigError(ValueError):
    """Schema violations; ``errors`` lists every one of them."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


def load_config(path) -> dict:
    """Read a config or manifest file and return the raw config mapping."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    if "config" in data and "manifest_version" in data:
        data = data["config"]
    return data


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "tau_grid":
            out[k] = _merge(out[k], v)
        elif isinstance(v, dict) and k == "tau_grid":
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError([f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors])


def resolve(raw: dict, command: str | None = None) -> dict:
    """Validate ``raw`` and fill every default.

    The result is self-contained: feeding it back through :func:`resolve`
    returns it unchanged.
    """
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    errors = []
    net, noise = cfg["network"], cfg["noise"]
    n_sw = 2 * (net["n_nodes"] - 1)
    if noise["p_loss"] is not None and noise["attenuation_db_per_km"] is not None:
        errors.append("noise: give either p_loss or attenuation_db_per_km, not both")
    if noise["p_loss"] is None:
        if noise["attenuation_db_per_km"] is not None:
            att = noise["attenuation_db_per_km"] * net["length_m"] / 1000.0
            noise["p_loss"] = 1.0 - 10.0 ** (-att / 10.0)
        else:
            noise["p_loss"] = DEFAULT_P_LOSS
    noise["attenuation_db_per_km"] = None
    if net["chi_over_kappa"] is None:
        chi = [1.0] * n_sw
        if command == "w":
            for k, c in enumerate(w_shift_schedule(cfg["protocol"]["n"], 1.0)):
                if 2 * k < n_sw:
                    chi[2 * k] = c
        net["chi_over_kappa"] = chi
    elif len(net["chi_over_kappa"]) == 1:
        net["chi_over_kappa"] = net["chi_over_kappa"] * n_sw
    if len(net["chi_over_kappa"]) != n_sw:
        errors.append(f"network.chi_over_kappa: need 1 or {n_sw} values, got {len(net['chi_over_kappa'])}")
    if net["n_modes"] is not None:
        net["mode_window_over_kappa"] = None
    mc = cfg["monte_carlo"]
    if mc["sample_size"] > mc["trajectories"]:
        errors.append(
            f"monte_carlo.sample_size ({mc['sample_size']}) exceeds trajectories ({mc['trajectories']})"
        )
    grid = cfg["protocol"]["tau_grid"]
    if not grid["stop"] > grid["start"]:
        errors.append("protocol.tau_grid: stop must exceed start")
    if errors:
        raise ConfigError(errors)
    return cfg


def network_spec(cfg: dict) -> NetworkSpec:
    net = cfg["network"]
    kappa = TWO_PI * net["kappa_mhz"] * 1e6
    window = net["mode_window_over_kappa"]
    return NetworkSpec(
        omega_tr=TWO_PI * net["omega_tr_ghz"] * 1e9,
        kappa=kappa,
        length=net["length_m"],
        l_c=net["l_c_m"],
        chi=tuple(c * kappa for c in net["chi_over_kappa"]),
        n_nodes=net["n_nodes"],
        mode_window=None if window is None else window * kappa,
        n_modes=net["n_modes"],
        v_g_override=None if net["v_g_over_c"] is None else net["v_g_over_c"] * C_LIGHT,
        lamb_shift_compensation=net["lamb_shift_compensation"],
        far_band_correction=net["far_band_correction"],
    )


def _us(x):
    return math.inf if x is None else x * 1e-6


def noise_spec(cfg: dict) -> NoiseSpec:
    n = cfg["noise"]
    return NoiseSpec(
        t1=_us(n["t1_us"]),
        p_loss=n["p_loss"],
        t1_switch=None if n["t1_switch_us"] is None else n["t1_switch_us"] * 1e-6,
    )


def bootstrap_spec(cfg: dict) -> BootstrapSpec:
    mc = cfg["monte_carlo"]
    return BootstrapSpec(mc["resamples"], mc["sample_size"], mc["seed"])
