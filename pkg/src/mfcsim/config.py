"""Scenario configuration files.

A config is a YAML mapping.  Every rate carries an explicit unit:
``GHz``, ``MHz``, ``kHz`` and ``Hz`` are read as nu/2pi (so ``g: 20 GHz``
means g = 2pi * 20 rad/ns), ``rad/ns`` is taken as is, and ``Omega_M``
means a multiple of the mechanical frequency.  Times take ``ns``, ``us``
(or ``μs``), ``ms`` or ``s``.  Unknown keys are rejected.

Example::

    scenario: pumped-swap
    params:
      kappa: 1 GHz
      Gamma: 50 MHz
    n_cav: 5.0e4
    protocol:
      pump: transient
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import experiments as X
from .models import ModelError, SystemParams

SCENARIOS = ("vacuum-swap", "pumped-swap", "fidelity-scan", "cooling-scan", "mech-validation", "cmt-curves")
SCAN_SCENARIOS = ("fidelity-scan", "cooling-scan")

FREQUENCY_UNITS = {"GHz": 1.0, "MHz": 1e-3, "kHz": 1e-6, "Hz": 1e-9}
TIME_UNITS = {"ns": 1.0, "us": 1e3, "μs": 1e3, "µs": 1e3, "ms": 1e6, "s": 1e9}
PARAM_RATES = ("omega_c", "Omega_M", "g", "g0", "J", "J_M", "kappa", "Gamma", "Gamma_star", "Gamma_M")
RATE_AXES = ("Gamma", "kappa", "Gamma_star", "J_M", "Gamma_M")

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s\d].*?)\s*$")

COMMON_KEYS = {"scenario", "description", "params", "solver", "resonance", "output"}
SCENARIO_KEYS = {
    "vacuum-swap": {"dims", "sideband", "t_end", "n_points"},
    "pumped-swap": {"dims", "max_excitations", "n_cav", "model", "protocol", "release"},
    "fidelity-scan": {"dims", "max_excitations", "n_cav", "model", "protocol", "axes"},
    "cooling-scan": {"axes", "phonon_dim", "cavity_dim", "max_phonon_dim", "top_population_tol", "guard_phonon_dim",
                     "cavity_check"},
    "mech-validation": {"pumped", "n_cav", "t_end", "n_points"},
    "cmt-curves": {"ratios"},
}
EVOLVE_SOLVER = {"method": ("auto", "eig", "expm", "ode"), "keys": {"method", "rtol", "atol"}}
STEADY_SOLVER = {"method": ("auto", "dense", "direct", "iterative"),
                 "keys": {"method", "drop_tol", "fill_factor", "gmres_rtol"}}
PROTOCOL_KEYS = {"pump", "switch_off", "t_off", "grid_step", "search_factor", "release_time",
                 "release_points", "transient_span"}
PROTOCOL_TIMES = ("t_off", "grid_step", "release_time")
OUTPUT_KEYS = {"dir", "prefix"}
AXIS_KEYS = {"name", "values", "start", "stop", "num", "scale"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def _split(key: str, value) -> tuple[float, str]:
    if isinstance(value, bool):
        raise ConfigError(key, "expected a quantity with a unit")
    if isinstance(value, (int, float)):
        raise ConfigError(key, f"missing unit annotation on {value!r}")
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a quantity string like '20 GHz', got {type(value).__name__}")
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(key, f"cannot parse quantity {value!r}")
    return float(m.group(1)), m.group(2)


def parse_rate(key: str, value, Omega_M: float | None = None) -> float:
    """Rate string to rad/ns."""
    number, unit = _split(key, value)
    if unit in FREQUENCY_UNITS:
        out = 2.0 * math.pi * number * FREQUENCY_UNITS[unit]
    elif unit == "rad/ns":
        out = number
    elif unit == "Omega_M":
        if Omega_M is None:
            raise ConfigError(key, "unit Omega_M is not available here")
        out = number * Omega_M
    else:
        raise ConfigError(key, f"unknown rate unit {unit!r}; use GHz, MHz, kHz, Hz, rad/ns or Omega_M")
    if not math.isfinite(out):
        raise ConfigError(key, "rate must be finite")
    return out


def parse_time(key: str, value) -> float:
    """Time string to ns."""
    number, unit = _split(key, value)
    if unit not in TIME_UNITS:
        raise ConfigError(key, f"unknown time unit {unit!r}; use ns, us, ms or s")
    return number * TIME_UNITS[unit]


def rate_str(value: float) -> str:
    return f"{value!r} rad/ns"


def time_str(value: float) -> str:
    return f"{value!r} ns"


def _mapping(key: str, value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, "expected a mapping")
    return value


def _check_keys(key: str, data: dict, allowed: set):
    for k in data:
        if k not in allowed:
            where = f"{key}.{k}" if key else str(k)
            raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(key: str, value, *, integer: bool = False, minimum: float | None = None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
        else:
            raise ConfigError(key, f"expected a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}")
    return value


def _choice(key: str, value, options) -> str:
    if value not in options:
        raise ConfigError(key, f"must be one of {', '.join(options)}, got {value!r}")
    return value


def _bool(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    return value


def default_params(scenario: str) -> SystemParams:
    if scenario in ("pumped-swap", "fidelity-scan"):
        return X.paper_pumped_params()
    if scenario == "cooling-scan":
        return X.paper_cooling_params()
    if scenario == "mech-validation":
        return X.paper_swap_params(J_M=2 * math.pi * 0.05)
    return X.paper_swap_params()


def _parse_params(scenario: str, raw) -> SystemParams:
    raw = _mapping("params", raw)
    _check_keys("params", raw, set(PARAM_RATES) | {"n_th", "kappa_overrides"})
    base = default_params(scenario)
    values: dict[str, Any] = {}
    Omega_M = parse_rate("params.Omega_M", raw["Omega_M"]) if "Omega_M" in raw else base.Omega_M
    for name in PARAM_RATES:
        if name in raw:
            values[name] = parse_rate(f"params.{name}", raw[name], Omega_M)
    if "n_th" in raw:
        values["n_th"] = _number("params.n_th", raw["n_th"], minimum=0.0)
    if "kappa_overrides" in raw:
        over = _mapping("params.kappa_overrides", raw["kappa_overrides"])
        values["kappa_overrides"] = tuple(
            (str(slot), parse_rate(f"params.kappa_overrides.{slot}", v, Omega_M)) for slot, v in sorted(over.items()))
    if "omega_c" in values:
        # keep the emitter where the base put it relative to the cavity
        values["omega_A"] = values["omega_c"] + base.detuning
    try:
        return base.replace(**values)
    except ModelError as exc:
        raise ConfigError("params", str(exc)) from None


def _grid(key: str, raw, parse) -> tuple[list[float], str]:
    """Explicit ``values`` or ``start/stop/num`` with a linear or log ``scale``."""
    scale = _choice(f"{key}.scale", raw.get("scale", "log"), ("linear", "log"))
    if "values" in raw:
        if any(k in raw for k in ("start", "stop", "num")):
            raise ConfigError(key, "give either values or start/stop/num")
        vals = raw["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{key}.values", "expected a non-empty list")
        return [parse(f"{key}.values[{i}]", v) for i, v in enumerate(vals)], scale
    for k in ("start", "stop", "num"):
        if k not in raw:
            raise ConfigError(f"{key}.{k}", "required")
    start, stop = parse(f"{key}.start", raw["start"]), parse(f"{key}.stop", raw["stop"])
    num = _number(f"{key}.num", raw["num"], integer=True, minimum=1)
    if scale == "log":
        if start <= 0 or stop <= 0:
            raise ConfigError(key, "log-spaced axes need positive start and stop")
        vals = np.geomspace(start, stop, num)
    else:
        vals = np.linspace(start, stop, num)
    return [float(v) for v in vals], scale


def _parse_axes(scenario: str, raw, params: SystemParams) -> list[X.Axis]:
    if not isinstance(raw, list):
        raise ConfigError("axes", "expected a list of two axes")
    if len(raw) != 2:
        raise ConfigError("axes", f"expected exactly two axes, got {len(raw)}")
    allowed = X.FIDELITY_AXES if scenario == "fidelity-scan" else ("Gamma", "n_cav")
    axes = []
    for i, ax in enumerate(raw):
        key = f"axes[{i}]"
        ax = _mapping(key, ax)
        _check_keys(key, ax, AXIS_KEYS)
        if "name" not in ax:
            raise ConfigError(f"{key}.name", "required")
        name = _choice(f"{key}.name", ax["name"], allowed)
        if name in RATE_AXES:
            def parse(k, v):
                return parse_rate(k, v, params.Omega_M)
        else:
            def parse(k, v):
                return _number(k, v, minimum=0.0)
        vals, scale = _grid(key, ax, parse)
        axes.append(X.Axis(name, vals, scale))
    if axes[0].name == axes[1].name:
        raise ConfigError("axes", "the two axes must differ")
    if scenario == "cooling-scan" and [a.name for a in axes] != ["Gamma", "n_cav"]:
        raise ConfigError("axes", "cooling scans take axes Gamma then n_cav")
    return axes


def _parse_protocol(raw) -> X.SwapProtocol:
    raw = _mapping("protocol", raw)
    _check_keys("protocol", raw, PROTOCOL_KEYS)
    kw: dict[str, Any] = {}
    for k, v in raw.items():
        if k in PROTOCOL_TIMES:
            kw[k] = None if v is None else parse_time(f"protocol.{k}", v)
        elif k in ("pump", "switch_off"):
            kw[k] = v
        elif k == "release_points":
            kw[k] = _number(f"protocol.{k}", v, integer=True, minimum=2)
        elif k == "transient_span":
            kw[k] = _number(f"protocol.{k}", v, minimum=0.0)
        else:
            kw[k] = _number(f"protocol.{k}", v)
    try:
        return X.SwapProtocol(**kw)
    except ValueError as exc:
        raise ConfigError("protocol", str(exc)) from None


def _parse_solver(scenario: str, raw) -> dict:
    """Evolution options (method, rtol, atol), or steady-state options for
    cooling scans (method, drop_tol, fill_factor, gmres_rtol)."""
    raw = _mapping("solver", raw)
    spec = STEADY_SOLVER if scenario == "cooling-scan" else EVOLVE_SOLVER
    _check_keys("solver", raw, spec["keys"])
    out: dict[str, Any] = {}
    for k, v in raw.items():
        if k == "method":
            out[k] = _choice("solver.method", v, spec["method"])
        elif k == "fill_factor":
            out[k] = _number(f"solver.{k}", v, minimum=1.0)
        else:
            out[k] = _number(f"solver.{k}", v)
            if out[k] <= 0:
                raise ConfigError(f"solver.{k}", "must be > 0")
    return out


def _parse_dims(raw) -> dict[str, int]:
    raw = _mapping("dims", raw)
    out = {}
    for slot, d in sorted(raw.items()):
        out[str(slot)] = _number(f"dims.{slot}", d, integer=True, minimum=1)
    return out


@dataclass
class ScenarioConfig:
    """Validated scenario with every quantity in internal units (rad/ns, ns)."""

    scenario: str
    params: SystemParams
    options: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    resonance: str = "dressed"
    output: dict = field(default_factory=dict)
    description: str = ""
    source: dict = field(default_factory=dict)

    @property
    def is_scan(self) -> bool:
        return self.scenario in SCAN_SCENARIOS

    def normalized(self) -> dict:
        """Config mapping in internal units; parsing it gives the same config."""
        params: dict[str, Any] = {k: rate_str(getattr(self.params, k)) for k in PARAM_RATES}
        params["n_th"] = self.params.n_th
        if self.params.kappa_overrides:
            params["kappa_overrides"] = {s: rate_str(r) for s, r in self.params.kappa_overrides}
        out: dict[str, Any] = {"scenario": self.scenario}
        if self.description:
            out["description"] = self.description
        out["params"] = params
        out["resonance"] = self.resonance
        if self.solver:
            out["solver"] = dict(sorted(self.solver.items()))
        for k, v in self.options.items():
            if k == "protocol":
                out[k] = _protocol_dict(v)
            elif k == "axes":
                out[k] = [_axis_dict(a) for a in v]
            elif k == "ratios":
                out[k] = {"values": list(v), "scale": self.options.get("ratios_scale", "linear")}
            elif k == "ratios_scale":
                continue
            elif k in ("t_end",):
                out[k] = None if v is None else time_str(v)
            else:
                out[k] = v
        if self.output:
            out["output"] = dict(self.output)
        return out

    def digest(self) -> str:
        text = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _protocol_dict(p: X.SwapProtocol) -> dict:
    out: dict[str, Any] = {"pump": p.pump, "switch_off": p.switch_off}
    for k in PROTOCOL_TIMES:
        v = getattr(p, k)
        if v is not None:
            out[k] = time_str(v)
    out["search_factor"] = p.search_factor
    out["release_points"] = p.release_points
    out["transient_span"] = p.transient_span
    return out


def _axis_dict(a: X.Axis) -> dict:
    if a.name in RATE_AXES:
        vals: list = [rate_str(v) for v in a.values]
    else:
        vals = list(a.values)
    return {"name": a.name, "values": vals, "scale": a.scale}


def parse_config(data) -> ScenarioConfig:
    """Validate a config mapping (as loaded from YAML)."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    if "scenario" not in data:
        raise ConfigError("scenario", "required")
    scenario = _choice("scenario", data["scenario"], SCENARIOS)
    _check_keys("", data, COMMON_KEYS | SCENARIO_KEYS[scenario])
    params = _parse_params(scenario, data.get("params"))
    resonance = _choice("resonance", data.get("resonance", "dressed"), X.RESONANCES)
    solver = _parse_solver(scenario, data.get("solver"))
    output = _mapping("output", data.get("output"))
    _check_keys("output", output, OUTPUT_KEYS)
    output = {k: str(v) for k, v in sorted(output.items())}
    description = data.get("description", "") or ""
    if not isinstance(description, str):
        raise ConfigError("description", "expected a string")

    opts: dict[str, Any] = {}
    get = data.get
    if scenario in ("vacuum-swap", "pumped-swap", "fidelity-scan"):
        opts["dims"] = _parse_dims(get("dims"))
    if scenario == "vacuum-swap":
        opts["sideband"] = _choice("sideband", get("sideband", 1), (1, -1))
        opts["t_end"] = None if get("t_end") is None else parse_time("t_end", get("t_end"))
        opts["n_points"] = _number("n_points", get("n_points", 1801), integer=True, minimum=2)
        if any(getattr(params, k) > 0 for k in ("kappa", "Gamma", "Gamma_star", "Gamma_M")):
            raise ConfigError("params", "vacuum-swap expects lossless parameters")
    if scenario in ("pumped-swap", "fidelity-scan"):
        cap = get("max_excitations")
        opts["max_excitations"] = None if cap is None else _number("max_excitations", cap, integer=True, minimum=1)
        opts["n_cav"] = _number("n_cav", get("n_cav", 5e4), minimum=0.0)
        opts["model"] = _choice("model", get("model", "three-cavity"), ("three-cavity", "full-mech"))
        opts["protocol"] = _parse_protocol(get("protocol"))
        if scenario == "pumped-swap":
            if opts["n_cav"] <= 0:
                raise ConfigError("n_cav", "a pumped swap needs n_cav > 0")
            opts["release"] = _bool("release", get("release", True))
    if scenario in SCAN_SCENARIOS:
        if "axes" not in data:
            raise ConfigError("axes", "required for scans")
        opts["axes"] = _parse_axes(scenario, data["axes"], params)
    if scenario == "cooling-scan":
        opts["phonon_dim"] = _number("phonon_dim", get("phonon_dim", 15), integer=True, minimum=2)
        opts["cavity_dim"] = _number("cavity_dim", get("cavity_dim", 2), integer=True, minimum=2)
        opts["max_phonon_dim"] = _number("max_phonon_dim", get("max_phonon_dim", 32), integer=True, minimum=2)
        if opts["max_phonon_dim"] < opts["phonon_dim"]:
            raise ConfigError("max_phonon_dim", "must be >= phonon_dim")
        opts["top_population_tol"] = _number("top_population_tol", get("top_population_tol", 1e-3), minimum=0.0)
        opts["cavity_check"] = _bool("cavity_check", get("cavity_check", False))
        guard = get("guard_phonon_dim", 32)
        opts["guard_phonon_dim"] = None if guard is None else _number("guard_phonon_dim", guard, integer=True,
                                                                      minimum=2)
        if params.Gamma_M <= 0:
            raise ConfigError("params.Gamma_M", "cooling needs Gamma_M > 0")
    if scenario == "mech-validation":
        opts["pumped"] = _bool("pumped", get("pumped", False))
        opts["n_cav"] = _number("n_cav", get("n_cav", 5e4), minimum=0.0)
        opts["t_end"] = None if get("t_end") is None else parse_time("t_end", get("t_end"))
        opts["n_points"] = _number("n_points", get("n_points", 1201), integer=True, minimum=2)
        if params.J_M <= 0:
            raise ConfigError("params.J_M", "mechanical validation needs J_M > 0")
    if scenario == "cmt-curves":
        raw = _mapping("ratios", get("ratios") or {"start": -10, "stop": 10, "num": 201, "scale": "linear"})
        _check_keys("ratios", raw, {"values", "start", "stop", "num", "scale"})
        if "scale" not in raw:
            raw = {**raw, "scale": "linear"}
        vals, scale = _grid("ratios", raw, lambda k, v: _number(k, v))
        opts["ratios"] = vals
        opts["ratios_scale"] = scale
    return ScenarioConfig(scenario, params, opts, solver, resonance, output, description, copy.deepcopy(data))


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return parse_config(data)


def dump_normalized(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.normalized(), sort_keys=False, allow_unicode=True)
