"""Experiment runners: evolution, steady states, sweeps, spectra and oracle verification."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigurationError, HeomError
from .hierarchy import assemble_generator
from .model import EXCITED, GROUND, CouplingType, ModelParams
from .observables import (
    SPECTRUM_CONVENTION,
    CorrelationSeries,
    emission_spectrum,
    stationary_hierarchy,
    two_time_correlation,
)
from .oracles import (
    lindblad_correlation,
    lindblad_evolution,
    lindblad_steady_state,
    markov_rates,
    monte_carlo_evolution,
    ou_dephasing_coherence,
    rwa_bath_excited_population,
)
from .output import write_plot_script, write_table
from .propagator import (
    converge_depth,
    find_steady_state,
    initial_state,
    propagate,
    sample_grid,
)

logger = logging.getLogger(__name__)

INITIAL_STATES = {"excited": EXCITED, "ground": GROUND, "plus": np.full((2, 2), 0.5, dtype=complex)}


@dataclass
class DepthInfo:
    depth: int
    difference: float = float("nan")  # sup-norm change from depth - 2; nan for a fixed depth

    def describe(self) -> str:
        if np.isnan(self.difference):
            return str(self.depth)
        return f"{self.depth} (change from depth {self.depth - 2}: {self.difference:.3e})"


@dataclass
class RunOutcome:
    files: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def with_treatment(params: ModelParams, treatment: str) -> ModelParams:
    if treatment == "markov":
        return params
    return params.with_coupling(CouplingType(treatment))


def resolve_depth(cfg: ExperimentConfig, evaluate):
    """Run ``evaluate(depth) -> (observable, payload)`` under the depth policy.

    With automatic depth the payload of the deeper of the two agreeing depths
    is returned.
    """
    policy = cfg.depth
    if not policy.auto:
        _, payload = evaluate(policy.fixed)
        return payload, DepthInfo(policy.fixed)
    payloads = {}

    def observable(depth):
        obs, payloads[depth] = evaluate(depth)
        return obs

    res = converge_depth(observable, policy.start, tol=policy.tol, max_depth=policy.max_depth)
    return payloads[res.depth + 2], DepthInfo(res.depth + 2, res.difference)


def _generator(cfg: ExperimentConfig, params: ModelParams, depth: int):
    return assemble_generator(params, depth, truncation=cfg.depth.truncation, max_slots=cfg.depth.max_slots)


# --------------------------------------------------------------------------
# single computations


def evolution(cfg: ExperimentConfig, params: ModelParams, treatment: str):
    """Physical states on the sampling grid; returns (times, states, DepthInfo or None)."""
    prop = cfg.propagation
    times = sample_grid(0.0, prop.t_end, prop.sample_stride)
    rho0 = INITIAL_STATES[cfg.initial_state]
    if treatment == "markov":
        res = lindblad_evolution(params, rho0, times, cfg.markov_field_rates)
        return times, res.states, None
    p = with_treatment(params, treatment)

    def evaluate(depth):
        gen = _generator(cfg, p, depth)
        traj = propagate(gen, initial_state(rho0, gen.layout), prop, times=times)
        return traj.physical_states, traj.physical_states

    states, info = resolve_depth(cfg, evaluate)
    return times, states, info


def steady_state(cfg: ExperimentConfig, params: ModelParams, treatment: str, warm: dict | None = None):
    """Steady physical state; returns (rho, detection time, DepthInfo or None).

    ``warm`` maps depth to the converged hierarchy of a previous run and is
    updated in place; it only affects runtime.
    """
    if treatment == "markov":
        return lindblad_steady_state(params, cfg.markov_field_rates), float("nan"), None
    p = with_treatment(params, treatment)
    prop = cfg.steady_propagation()
    rho0 = INITIAL_STATES[cfg.initial_state]

    def evaluate(depth):
        gen = _generator(cfg, p, depth)
        if warm is not None and depth in warm:
            start = warm[depth].remap(gen.layout)
        else:
            start = initial_state(rho0, gen.layout)
        ss = find_steady_state(gen, start, prop)
        if warm is not None:
            warm[depth] = ss.hierarchy
        return ss.rho, ss

    ss, info = resolve_depth(cfg, evaluate)
    return ss.rho, ss.time, info


def correlation(cfg: ExperimentConfig, params: ModelParams, treatment: str):
    """Stationary ``<sigma_+(t1 + tau) sigma_-(t1)>``; returns (CorrelationSeries, DepthInfo or None)."""
    sc = cfg.spectrum
    tau = np.linspace(0.0, sc.tau_max, sc.n_tau)
    if treatment == "markov":
        rho = lindblad_steady_state(params, cfg.markov_field_rates)
        values = lindblad_correlation(params, tau, cfg.markov_field_rates)
        return CorrelationSeries(tau, values, float(rho[0, 0].real)), None
    p = with_treatment(params, treatment)
    prop = cfg.steady_propagation()
    rho0 = INITIAL_STATES[cfg.initial_state]

    def evaluate(depth):
        gen = _generator(cfg, p, depth)
        ss = find_steady_state(gen, initial_state(rho0, gen.layout), prop)
        hier = stationary_hierarchy(gen, ss, prop)
        corr = two_time_correlation(gen, hier, tau, prop)
        return corr.values, corr

    return resolve_depth(cfg, evaluate)


# --------------------------------------------------------------------------
# metadata


def metadata(cfg: ExperimentConfig, params: ModelParams, **extra) -> dict:
    meta = {"code_version": __version__, "run_kind": cfg.kind}
    meta.update({f"param.{k}": v for k, v in params.describe().items()})
    meta["bath_amplitude_A"] = params.bath.amplitude
    meta["depth_policy"] = cfg.depth.describe()
    meta["truncation"] = cfg.depth.truncation
    for k, v in dataclasses.asdict(cfg.propagation).items():
        meta[f"propagation.{k}"] = v
    meta["steady_t_end"] = cfg.steady_t_end
    if "markov" in cfg.treatments or cfg.kind == "verify":
        rates = markov_rates(params, cfg.markov_field_rates)
        meta.update({f"markov.{k}": v for k, v in rates.items()})
    meta.update(extra)
    meta["config"] = cfg.to_dict()
    return meta


def _row_of(rho) -> list:
    return [rho[0, 0].real, rho[1, 1].real, rho[0, 1].real, rho[0, 1].imag, abs(rho[0, 1])]


STATE_COLUMNS = ["rho_ee", "rho_gg", "re_rho_eg", "im_rho_eg", "abs_rho_eg"]


def _emit(out: RunOutcome, cfg: ExperimentConfig, path, columns, rows, meta, ycols):
    out.files += write_table(path, columns, rows, meta, json_mirror=cfg.output.json)
    if cfg.output.plot_script:
        out.files.append(write_plot_script(path, ycols))


# --------------------------------------------------------------------------
# run kinds


def run_evolve(cfg: ExperimentConfig, out_dir: Path) -> RunOutcome:
    out = RunOutcome()
    params = cfg.params()
    for treatment in cfg.treatments:
        try:
            times, states, info = evolution(cfg, params, treatment)
        except HeomError as exc:
            out.failures.append(f"{treatment}: {exc}")
            continue
        rows = [[t, *_row_of(r)] for t, r in zip(times, states)]
        meta = metadata(
            cfg,
            with_treatment(params, treatment),
            treatment=treatment,
            depth=info.describe() if info else "n/a (Lindblad)",
            initial_state=cfg.initial_state,
        )
        _emit(out, cfg, out_dir / f"evolve_{treatment}.csv", ["t", *STATE_COLUMNS], rows, meta, [1, 3])
    return out


def run_steady(cfg: ExperimentConfig, out_dir: Path) -> RunOutcome:
    out = RunOutcome()
    params = cfg.params()
    rows, depths = [], {}
    for k, treatment in enumerate(cfg.treatments):
        try:
            rho, t_det, info = steady_state(cfg, params, treatment)
        except HeomError as exc:
            out.failures.append(f"{treatment}: {exc}")
            rho, t_det, info = np.full((2, 2), np.nan, dtype=complex), float("nan"), None
        depths[treatment] = info.describe() if info else "n/a"
        rows.append([k, *_row_of(rho), t_det])
    meta = metadata(
        cfg,
        params,
        treatments=list(cfg.treatments),
        treatment_index="row k uses treatments[k]",
        depth=depths,
        failures=out.failures,
    )
    _emit(out, cfg, out_dir / "steady.csv", ["treatment_index", *STATE_COLUMNS, "detection_time"], rows, meta, [1])
    return out


def _sweep_point(cfg: ExperimentConfig, override: dict, warm: dict | None):
    params = cfg.params(**override)
    values, depths, failures = [], {}, []
    for treatment in cfg.treatments:
        t0 = time.perf_counter()
        try:
            rho, _, info = steady_state(cfg, params, treatment, None if warm is None else warm.setdefault(treatment, {}))
            values.append(rho[0, 0].real)
            depths[treatment] = info.depth if info else None
        except HeomError as exc:
            values.append(float("nan"))
            failures.append(f"{cfg.sweep.parameter}={override[cfg.sweep.parameter]:g} {treatment}: {exc}")
            depths[treatment] = None
        logger.info("sweep %s %s: %.1f s", override, treatment, time.perf_counter() - t0)
    return values, depths, failures


def _sweep_worker(args):
    cfg, override = args
    return _sweep_point(cfg, override, None)


def run_sweep(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> RunOutcome:
    """Steady excited population per sweep point, one column per treatment.

    A failing point is recorded as NaN and listed in the header; the sweep
    continues. With ``threads > 1`` points run in separate processes (no warm
    starts); otherwise each point starts from the previous converged hierarchy.
    """
    out = RunOutcome()
    plan = cfg.sweep_plan()
    if threads > 1 and len(plan) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_worker, [(cfg, o) for o in plan]))
    else:
        warm: dict = {}
        results = [_sweep_point(cfg, o, warm) for o in plan]
    rows, depth_table = [], []
    for override, (values, depths, failures) in zip(plan, results):
        rows.append([override[cfg.sweep.parameter], *values])
        depth_table.append(depths)
        out.failures += failures
    meta = metadata(
        cfg,
        cfg.params(),
        sweep_parameter=cfg.sweep.parameter,
        sweep_values=list(cfg.sweep.values),
        treatments=list(cfg.treatments),
        observable="steady-state excited population rho_ee",
        depth_per_point=depth_table,
        failures=out.failures,
    )
    columns = [cfg.sweep.parameter, *cfg.treatments]
    _emit(out, cfg, out_dir / "sweep.csv", columns, rows, meta, list(range(1, len(columns))))
    return out


def run_spectrum(cfg: ExperimentConfig, out_dir: Path) -> RunOutcome:
    out = RunOutcome()
    params = cfg.params()
    sc = cfg.spectrum
    omega = np.linspace(sc.omega_min, sc.omega_max, sc.n_omega)
    columns, series, info_by = ["omega"], [omega], {}
    for treatment in cfg.treatments:
        try:
            corr, info = correlation(cfg, params, treatment)
            spec = emission_spectrum(corr, omega, decay_tol=sc.decay_tol)
        except HeomError as exc:
            out.failures.append(f"{treatment}: {exc}")
            continue
        info_by[treatment] = info.describe() if info else "n/a (Lindblad)"
        columns += [f"intensity_{treatment}", f"raw_{treatment}"]
        series += [spec.intensities, spec.raw]
        meta = metadata(
            cfg,
            with_treatment(params, treatment),
            treatment=treatment,
            depth=info_by[treatment],
            observable="C(tau) = <sigma_+(t1 + tau) sigma_-(t1)>",
            steady_population=corr.steady_population,
        )
        rows = np.column_stack([corr.lags, corr.values.real, corr.values.imag])
        _emit(out, cfg, out_dir / f"correlation_{treatment}.csv", ["tau", "re_C", "im_C"], rows, meta, [1, 2])
    if len(columns) > 1:
        meta = metadata(cfg, params, treatments=list(info_by), depth=info_by, spectrum_convention=SPECTRUM_CONVENTION)
        ycols = list(range(1, len(columns), 2))
        _emit(out, cfg, out_dir / "spectrum.csv", columns, np.column_stack(series), meta, ycols)
    return out


# --------------------------------------------------------------------------
# verification


@dataclass
class Check:
    name: str
    deviation: float
    tolerance: float
    passed: bool
    detail: str = ""


def _pick(cfg_model: dict, key: str, default: float) -> float:
    v = cfg_model.get(key)
    return default if v is None or (key.startswith("delta") and v == 0) else float(v)


def verify_checks(cfg: ExperimentConfig) -> list[Check]:
    """Oracle agreement checks.

    Bath and field parameters come from the ``[model]`` section when they are
    switched on there, otherwise from built-in under-damped
    cases. Depths are escalated automatically unless fixed.
    """
    m = cfg.model
    prop = cfg.propagation
    times = sample_grid(0.0, prop.t_end, prop.sample_stride)
    checks = []

    def guarded(name, fn):
        try:
            checks.append(fn())
        except HeomError as exc:
            checks.append(Check(name, float("nan"), float("nan"), False, str(exc)))

    gb, db = _pick(m, "gamma_b", 0.4), _pick(m, "delta_b", 0.6)
    gf, df = _pick(m, "gamma_f", 0.4), _pick(m, "delta_f", 0.4)
    omega0 = float(m.get("omega0", 1.0))
    conv = {"field_amplitude": m.get("field_amplitude", "std_dev")}

    def rwa_oracle():
        p = ModelParams.build(omega0=omega0, gamma_b=gb, delta_b=db, coupling="rwa", **conv)
        _, states, info = evolution(cfg_excited, p, "rwa")
        ref = rwa_bath_excited_population(times, gb, p.bath.amplitude)
        dev = float(np.max(np.abs(states[:, 0, 0].real - ref)))
        return Check("rwa_bath_exact_population", dev, 1e-4, dev < 1e-4, f"gamma_b={gb:g} delta_b={db:g} depth {info.describe()}")

    def dephasing_oracle():
        p = ModelParams.build(omega0=omega0, gamma_f=gf, delta_f=0.0, delta_omega=df, **conv)
        _, states, info = evolution(cfg_plus, p, "full")
        env = np.abs(states[:, 0, 1]) / 0.5
        dev = float(np.max(np.abs(env - ou_dephasing_coherence(times, p.field[0], p.field_amplitude))))
        return Check("omega_dephasing_envelope", dev, 1e-4, dev < 1e-4, f"gamma={gf:g} delta={df:g} depth {info.describe()}")

    def population_drift():
        p = ModelParams.build(omega0=omega0, gamma_f=gf, delta_f=0.0, delta_omega=df, **conv)
        _, states, _ = evolution(cfg_plus, p, "full")
        dev = float(np.max(np.abs(states[:, 0, 0].real - 0.5)))
        return Check("omega_dephasing_populations_constant", dev, 1e-10, dev < 1e-10)

    def monte_carlo():
        p = ModelParams.build(omega0=omega0, gamma_f=gf, delta_f=df, **conv)
        mc_cfg = dataclasses.replace(cfg.monte_carlo, t_end=prop.t_end)
        mc = monte_carlo_evolution(p, EXCITED, mc_cfg)
        mc_times_cfg = dataclasses.replace(cfg_excited, propagation=dataclasses.replace(prop, sample_stride=mc_cfg.dt * mc_cfg.sample_every))
        _, states, info = evolution(mc_times_cfg, p, "full")
        z = monte_carlo_z_scores(states[: len(mc.times)], mc, heom_error=info.difference)
        frac = float(np.mean(z > 3.0))
        worst = float(np.max(z))
        ok = frac <= 0.02 and worst <= 4.5
        return Check(
            "field_monte_carlo_agreement",
            worst,
            4.5,
            ok,
            f"{mc.n_trajectories} trajectories; {100 * frac:.1f}% of points beyond 3 sigma (allowed 2%)",
        )

    def field_steady():
        p = ModelParams.build(omega0=omega0, gamma_f=gf, delta_f=df, **conv)
        rho, _, _ = steady_state(cfg_excited, p, "full")
        dev = abs(rho[0, 0].real - 0.5)
        return Check("field_only_steady_half", dev, 1e-3, dev < 1e-3)

    def rwa_steady():
        p = ModelParams.build(omega0=omega0, gamma_b=gb, delta_b=db, coupling="rwa", **conv)
        rho, _, _ = steady_state(cfg_excited, p, "rwa")
        dev = rho[0, 0].real
        return Check("rwa_bath_steady_ground", dev, 1e-3, dev < 1e-3)

    def lindblad_limits():
        pb = ModelParams.build(omega0=omega0, gamma_b=gb, delta_b=db, **conv)
        pf = ModelParams.build(omega0=omega0, gamma_f=gf, delta_f=df, **conv)
        dev_b = lindblad_steady_state(pb, cfg.markov_field_rates)[0, 0].real
        dev_f = abs(lindblad_steady_state(pf, cfg.markov_field_rates)[0, 0].real - 0.5)
        dev = max(dev_b, dev_f)
        return Check("lindblad_steady_limits", dev, 1e-10, dev < 1e-10, "bath-only ground, field-only 1/2")

    cfg_excited = dataclasses.replace(cfg, initial_state="excited")
    # the coherence envelope needs a superposition start
    cfg_plus = dataclasses.replace(cfg, initial_state="plus")

    for name, fn in [
        ("rwa_bath_exact_population", rwa_oracle),
        ("omega_dephasing_envelope", dephasing_oracle),
        ("omega_dephasing_populations_constant", population_drift),
        ("field_only_steady_half", field_steady),
        ("rwa_bath_steady_ground", rwa_steady),
        ("lindblad_steady_limits", lindblad_limits),
        ("field_monte_carlo_agreement", monte_carlo),
    ]:
        guarded(name, fn)
    return checks


def monte_carlo_z_scores(heom_states: np.ndarray, mc, heom_error: float = 0.0) -> np.ndarray:
    """|HEOM - MC| / combined standard error for population and Re/Im coherence (t > 0)."""
    h = np.asarray(heom_states)[1:]
    mean, se = mc.mean[1:], mc.stderr[1:]
    herr = 0.0 if heom_error is None or np.isnan(heom_error) else heom_error
    pairs = [
        (h[:, 0, 0].real, mean[:, 0, 0].real, se[:, 0, 0].real),
        (h[:, 0, 1].real, mean[:, 0, 1].real, se[:, 0, 1].real),
        (h[:, 0, 1].imag, mean[:, 0, 1].imag, se[:, 0, 1].imag),
    ]
    z = [np.abs(a - b) / np.sqrt(s**2 + herr**2 + 1e-300) for a, b, s in pairs]
    return np.concatenate(z)


def run_verify(cfg: ExperimentConfig, out_dir: Path) -> RunOutcome:
    out = RunOutcome()
    checks = verify_checks(cfg)
    rows = [[c.name, c.deviation, c.tolerance, int(c.passed)] for c in checks]
    meta = metadata(cfg, cfg.params(), details={c.name: c.detail for c in checks if c.detail})
    out.files += write_table(
        out_dir / "verify.csv", ["check", "deviation", "tolerance", "passed"], rows, meta, json_mirror=cfg.output.json
    )
    out.failures += [f"{c.name}: deviation {c.deviation:.3e} vs tolerance {c.tolerance:.1e} {c.detail}".rstrip() for c in checks if not c.passed]
    out.checks = checks
    return out


RUNNERS = {
    "evolve": run_evolve,
    "steady": run_steady,
    "spectrum": run_spectrum,
    "verify": run_verify,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> RunOutcome:
    """Run the configured experiment and write its output files."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output.dir)
    if cfg.kind == "sweep":
        if cfg.sweep is None:
            raise ConfigurationError("sweep run without a sweep axis", key="sweep")
        return run_sweep(cfg, out_dir, threads)
    return RUNNERS[cfg.kind](cfg, out_dir)
