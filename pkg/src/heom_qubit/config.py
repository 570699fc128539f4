"""Experiment configuration: TOML text to a validated :class:`ExperimentConfig`.

Schema (every key optional unless noted)::

    [model]        omega0, gamma_f, delta_f, gamma_b, delta_b, coupling,
                   bath_amplitude, field_amplitude, and per-process overrides
                   gamma_omega, delta_omega, gamma_xi1, ... delta_xi2
    [run]          kind (required: evolve | steady | sweep | spectrum | verify),
                   treatments, initial_state (excited | ground | plus),
                   markov_field_rates (white_noise | bloch_redfield)
    [sweep]        parameter, and either values or (start, stop, num)
    [hierarchy]    depth (integer or "auto"), start_depth, max_depth,
                   depth_tol, truncation, max_slots
    [propagation]  t_end, dt_init, rel_tol, abs_tol, sample_stride,
                   steady_tol, steady_window, steady_t_end, method,
                   stability_factor
    [spectrum]     tau_max, n_tau, omega_min, omega_max, n_omega, decay_tol
    [monte_carlo]  n_trajectories, dt, seed, t_end, sample_stride
    [output]       dir, json, plot_script
"""

from __future__ import annotations

import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import ModelParams, NoiseKind
from .oracles import McConfig
from .propagator import DEFAULT_MAX_DEPTH, DEFAULT_START_DEPTH, PropagationConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

RUN_KINDS = ("evolve", "steady", "sweep", "spectrum", "verify")
TREATMENTS = ("full", "rwa", "markov")

_MODEL_KEYS = {
    "omega0",
    "gamma_f",
    "delta_f",
    "gamma_b",
    "delta_b",
    "coupling",
    "bath_amplitude",
    "field_amplitude",
} | {f"{p}_{k.value}" for p in ("gamma", "delta") for k in NoiseKind}

_SWEEPABLE = {k for k in _MODEL_KEYS if k not in ("coupling", "bath_amplitude", "field_amplitude")}

_DEFAULT_TREATMENTS = {
    "evolve": ("full",),
    "steady": ("full",),
    "sweep": TREATMENTS,
    "spectrum": ("full",),
    "verify": (),
}


@dataclass(frozen=True)
class DepthPolicy:
    """Fixed hierarchy depth, or ``fixed=None`` for automatic escalation."""

    fixed: int | None = None
    start: int = DEFAULT_START_DEPTH
    max_depth: int = DEFAULT_MAX_DEPTH
    tol: float = 1e-5
    truncation: str = "total"
    max_slots: int = 3_000_000

    @property
    def auto(self) -> bool:
        return self.fixed is None

    def describe(self) -> str:
        if self.auto:
            return f"auto(start={self.start}, step=2, tol={self.tol:g}, max={self.max_depth})"
        return str(self.fixed)


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    values: tuple


@dataclass(frozen=True)
class SpectrumConfig:
    tau_max: float = 400.0
    n_tau: int = 2**14
    omega_min: float = -2.0
    omega_max: float = 3.0
    n_omega: int = 2000
    decay_tol: float = 1e-6


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "heom_out"
    json: bool = False
    plot_script: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    kind: str
    treatments: tuple = ("full",)
    initial_state: str = "excited"
    markov_field_rates: str = "white_noise"
    sweep: SweepAxis | None = None
    depth: DepthPolicy = field(default_factory=DepthPolicy)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    steady_t_end: float = 2000.0
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    monte_carlo: McConfig = field(default_factory=McConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def params(self, **changes) -> ModelParams:
        return ModelParams.build(**{**self.model, **changes})

    def sweep_plan(self) -> list[dict]:
        """One model-override dict per sweep point (a single empty dict otherwise)."""
        if self.sweep is None:
            return [{}]
        return [{self.sweep.parameter: v} for v in self.sweep.values]

    def steady_propagation(self) -> PropagationConfig:
        return dataclasses.replace(self.propagation, t_end=self.steady_t_end)

    def to_dict(self) -> dict:
        """Plain mapping that :func:`parse_config` turns back into this config."""
        prop = dataclasses.asdict(self.propagation)
        prop["steady_t_end"] = self.steady_t_end
        prop.pop("invariant_tol")
        prop.pop("scaled")
        mc = {k: getattr(self.monte_carlo, k) for k in ("n_trajectories", "dt", "seed", "t_end", "sample_stride")}
        out = {
            "model": dict(self.model),
            "run": {
                "kind": self.kind,
                "treatments": list(self.treatments),
                "initial_state": self.initial_state,
                "markov_field_rates": self.markov_field_rates,
            },
            "hierarchy": {
                "depth": "auto" if self.depth.auto else self.depth.fixed,
                "start_depth": self.depth.start,
                "max_depth": self.depth.max_depth,
                "depth_tol": self.depth.tol,
                "truncation": self.depth.truncation,
                "max_slots": self.depth.max_slots,
            },
            "propagation": prop,
            "spectrum": dataclasses.asdict(self.spectrum),
            "monte_carlo": mc,
            # the directory is left out so a rerun elsewhere reproduces the file byte for byte
            "output": {"json": self.output.json, "plot_script": self.output.plot_script},
        }
        if self.sweep is not None:
            out["sweep"] = {"parameter": self.sweep.parameter, "values": list(self.sweep.values)}
        return out


_SECTIONS = {
    "model": _MODEL_KEYS,
    "run": {"kind", "treatments", "initial_state", "markov_field_rates"},
    "sweep": {"parameter", "values", "start", "stop", "num"},
    "hierarchy": {"depth", "start_depth", "max_depth", "depth_tol", "truncation", "max_slots"},
    "propagation": {
        "t_end",
        "dt_init",
        "rel_tol",
        "abs_tol",
        "sample_stride",
        "steady_tol",
        "steady_window",
        "steady_t_end",
        "method",
        "stability_factor",
    },
    "spectrum": {f.name for f in dataclasses.fields(SpectrumConfig)},
    "monte_carlo": {"n_trajectories", "dt", "seed", "sample_stride", "t_end"},
    "output": {f.name for f in dataclasses.fields(OutputConfig)},
}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Best-effort line number of a section header or of a key inside it."""
    lines = text.splitlines()
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    for no, line in enumerate(lines, 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


def _fail(text, message, section, key=None):
    line = _line_of(text, section, key)
    where = f" (line {line})" if line else ""
    name = f"{section}.{key}" if key else section
    raise ConfigurationError(f"{message}: '{name}'{where}", key=name, line=line)


def _build(cls, values: dict, text: str, section: str):
    try:
        return cls(**values)
    except ConfigurationError as exc:
        key = exc.key.split(".")[-1] if exc.key else None
        _fail(text, str(exc), section, key)
    except (TypeError, ValueError) as exc:
        key = next((k for k in values if k in str(exc)), None)
        _fail(text, f"invalid value ({exc})", section, key)


def _sweep_axis(raw: dict, text: str) -> SweepAxis:
    param = raw.get("parameter")
    if param is None:
        _fail(text, "sweep needs a parameter", "sweep", "parameter")
    name = str(param).removeprefix("model.")
    if name not in _SWEEPABLE:
        _fail(text, f"sweep parameter {param!r} does not name a numeric model field", "sweep", "parameter")
    if "values" in raw:
        if any(k in raw for k in ("start", "stop", "num")):
            _fail(text, "give either values or start/stop/num", "sweep", "values")
        values = raw["values"]
        if not isinstance(values, list) or not values:
            _fail(text, "values must be a non-empty list", "sweep", "values")
        try:
            values = tuple(float(v) for v in values)
        except (TypeError, ValueError):
            _fail(text, "values must be numbers", "sweep", "values")
    else:
        missing = [k for k in ("start", "stop", "num") if k not in raw]
        if missing:
            _fail(text, "sweep needs values or start/stop/num", "sweep", missing[0])
        num = raw["num"]
        if not isinstance(num, int) or num < 1:
            _fail(text, "num must be a positive integer", "sweep", "num")
        values = tuple(float(v) for v in np.linspace(float(raw["start"]), float(raw["stop"]), num))
    return SweepAxis(name, values)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate TOML experiment text.

    Unknown sections or keys, missing required entries and invalid values all
    raise :class:`ConfigurationError` naming the key and, where it can be
    located, the line.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
        raise ConfigurationError(f"cannot parse configuration: {exc}", line=line) from exc

    for section, body in raw.items():
        if section not in _SECTIONS:
            _fail(text, "unknown section", section)
        if not isinstance(body, dict):
            _fail(text, "expected a table", section)
        for key in body:
            if key not in _SECTIONS[section]:
                _fail(text, "unknown key", section, key)

    run = raw.get("run", {})
    kind = run.get("kind")
    if kind is None:
        _fail(text, "missing run kind", "run", "kind")
    if kind not in RUN_KINDS:
        _fail(text, f"run kind must be one of {RUN_KINDS}", "run", "kind")

    treatments = run.get("treatments", list(_DEFAULT_TREATMENTS[kind]))
    if isinstance(treatments, str):
        treatments = [treatments]
    for t in treatments:
        if t not in TREATMENTS:
            _fail(text, f"treatment {t!r} is not one of {TREATMENTS}", "run", "treatments")
    initial = run.get("initial_state", "excited")
    if initial not in ("excited", "ground", "plus"):
        _fail(text, "initial_state must be 'excited', 'ground' or 'plus'", "run", "initial_state")
    rates = run.get("markov_field_rates", "white_noise")
    if rates not in ("white_noise", "bloch_redfield"):
        _fail(text, "markov_field_rates must be 'white_noise' or 'bloch_redfield'", "run", "markov_field_rates")

    model = dict(raw.get("model", {}))
    try:
        ModelParams.build(**model)
    except ConfigurationError as exc:
        key = exc.key if isinstance(exc.key, str) and exc.key in model else None
        _fail(text, str(exc), "model", key)
    except (TypeError, ValueError) as exc:
        key = next((k for k in model if k in str(exc)), None)
        _fail(text, f"invalid value ({exc})", "model", key)

    sweep = None
    if kind == "sweep":
        if "sweep" not in raw:
            _fail(text, "run kind 'sweep' needs a [sweep] section", "run", "kind")
        sweep = _sweep_axis(raw["sweep"], text)
    elif "sweep" in raw:
        _fail(text, "a [sweep] section is only allowed with run kind 'sweep'", "sweep")

    h = raw.get("hierarchy", {})
    depth = h.get("depth", "auto")
    if depth != "auto" and not (isinstance(depth, int) and not isinstance(depth, bool) and depth >= 0):
        _fail(text, "depth must be a non-negative integer or 'auto'", "hierarchy", "depth")
    if h.get("truncation", "total") not in ("total", "per_direction"):
        _fail(text, "truncation must be 'total' or 'per_direction'", "hierarchy", "truncation")
    policy = DepthPolicy(
        fixed=None if depth == "auto" else depth,
        start=h.get("start_depth", DEFAULT_START_DEPTH),
        max_depth=h.get("max_depth", DEFAULT_MAX_DEPTH),
        tol=h.get("depth_tol", 1e-5),
        truncation=h.get("truncation", "total"),
        max_slots=h.get("max_slots", 3_000_000),
    )

    p = dict(raw.get("propagation", {}))
    steady_t_end = p.pop("steady_t_end", 2000.0)
    if not (isinstance(steady_t_end, (int, float)) and steady_t_end > 0):
        _fail(text, "steady_t_end must be positive", "propagation", "steady_t_end")
    prop = _build(PropagationConfig, p, text, "propagation")
    spec = _build(SpectrumConfig, raw.get("spectrum", {}), text, "spectrum")
    mc = _build(McConfig, raw.get("monte_carlo", {}), text, "monte_carlo")
    out = _build(OutputConfig, raw.get("output", {}), text, "output")

    return ExperimentConfig(
        model=model,
        kind=kind,
        treatments=tuple(treatments),
        initial_state=initial,
        markov_field_rates=rates,
        sweep=sweep,
        depth=policy,
        propagation=prop,
        steady_t_end=float(steady_t_end),
        spectrum=spec,
        monte_carlo=mc,
        output=out,
    )


CONFIG_HEADER_KEY = "config"


def load_config(path) -> ExperimentConfig:
    """Read a TOML file, or recover the configuration embedded in an output CSV header."""
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("#"):
        for line in text.splitlines():
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith(f"{CONFIG_HEADER_KEY} = "):
                return from_dict(json.loads(body.split(" = ", 1)[1]))
        raise ConfigurationError(f"{path}: no embedded configuration in the header")
    return parse_config(text)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def to_toml(data: dict) -> str:
    lines = []
    for section, body in data.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in body.items())
        lines.append("")
    return "\n".join(lines)


def from_dict(data: dict) -> ExperimentConfig:
    return parse_config(to_toml(data))
