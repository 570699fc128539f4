"""Reduced-state observables, stationary correlation function and emission spectrum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks as _find_peaks

from .errors import ContractViolation, WindowError
from .hierarchy import Generator, HierarchyState
from .model import SIGMA_MINUS
from .propagator import PropagationConfig, SteadyState, propagate, sample_grid

SPECTRUM_CONVENTION = "S(w) = Re int_0^tau_max C(tau) exp(-i w tau) dtau, trapezoidal, max-normalized"

DEFAULT_TAU_MAX = 400.0
DEFAULT_N_TAU = 2**14
DEFAULT_OMEGA_RANGE = (-2.0, 3.0)
DEFAULT_N_OMEGA = 2000


def excited_population(rho) -> float:
    return float(np.real(np.asarray(rho)[0, 0]))


def coherence(rho) -> complex:
    """Off-diagonal element ``rho[excited, ground]``."""
    return complex(np.asarray(rho)[0, 1])


def default_tau_grid(tau_max: float = DEFAULT_TAU_MAX, n: int = DEFAULT_N_TAU) -> np.ndarray:
    return np.linspace(0.0, tau_max, n)


def default_omega_grid(lo: float = DEFAULT_OMEGA_RANGE[0], hi: float = DEFAULT_OMEGA_RANGE[1], n: int = DEFAULT_N_OMEGA):
    return np.linspace(lo, hi, n)


@dataclass
class CorrelationSeries:
    """``<sigma_+(t1 + tau) sigma_-(t1)>`` on an ascending lag grid starting at 0."""

    lags: np.ndarray
    values: np.ndarray
    steady_population: float = float("nan")


@dataclass
class SpectrumResult:
    omegas: np.ndarray
    intensities: np.ndarray
    raw: np.ndarray = field(repr=False, default=None)
    scale: float = 1.0
    convention: str = SPECTRUM_CONVENTION


def stationary_hierarchy(gen: Generator, steady: SteadyState, cfg: PropagationConfig) -> HierarchyState:
    """Advance a detected steady state by one extra window (the choice of t1)."""
    if not steady.converged:
        raise ContractViolation("steady state did not converge")
    extra = PropagationConfig(**{**cfg.__dict__, "t_end": cfg.steady_window})
    traj = propagate(gen, steady.hierarchy, extra, times=sample_grid(0.0, cfg.steady_window, cfg.steady_window))
    return traj.final_hierarchy


def two_time_correlation(
    gen: Generator,
    steady,
    tau_grid,
    cfg: PropagationConfig | None = None,
) -> CorrelationSeries:
    """Stationary correlation ``C(tau) = <sigma_+(t1 + tau) sigma_-(t1)>``.

    Every ADM of the stationary hierarchy is left-multiplied by sigma_-, the
    result is propagated over ``tau_grid`` and ``Tr[sigma_+ rho_0(tau)]`` is
    read off the physical slot.

    Parameters
    ----------
    steady : SteadyState or HierarchyState
        Converged stationary hierarchy. A :class:`SteadyState` flagged as not
        converged is rejected.
    tau_grid : array_like
        Ascending lags starting at 0.
    """
    if isinstance(steady, SteadyState):
        if not steady.converged:
            raise ContractViolation("two_time_correlation needs a converged steady state")
        hier = steady.hierarchy
    else:
        hier = steady
    if not gen.layout.same_as(hier.layout):
        raise ContractViolation("steady hierarchy layout does not match the generator")
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or len(tau) < 2 or tau[0] != 0.0 or np.any(np.diff(tau) <= 0):
        raise ValueError("tau_grid must be ascending and start at 0")
    cfg = cfg or PropagationConfig()
    cfg = PropagationConfig(**{**cfg.__dict__, "t_end": float(tau[-1])})
    start = HierarchyState(hier.layout, SIGMA_MINUS[None, :, :] @ hier.data)
    traj = propagate(gen, start, cfg, times=tau, check_invariants=False)
    # Tr[sigma_+ X] = X[ground, excited]
    values = traj.physical_states[:, 1, 0].copy()
    return CorrelationSeries(tau, values, excited_population(hier.data[0]))


def emission_spectrum(
    corr: CorrelationSeries,
    omega_grid,
    *,
    decay_tol: float = 1e-6,
    negative_tol: float = 1e-3,
    zero_tol: float = 1e-8,
    chunk: int = 128,
) -> SpectrumResult:
    """One-sided Fourier transform of the correlation function, max-normalized.

    Raises :class:`WindowError` if ``|C|`` has not decayed below
    ``decay_tol * max|C|`` at the end of the lag grid, or if the transform has
    negative lobes deeper than ``negative_tol`` times its maximum. A
    correlation below ``zero_tol`` everywhere (a state that does not emit)
    gives an all-zero spectrum with ``scale = 0``.
    """
    tau = np.asarray(corr.lags, dtype=float)
    c = np.asarray(corr.values, dtype=complex)
    omega = np.asarray(omega_grid, dtype=float)
    if len(tau) < 2 or len(omega) == 0:
        raise WindowError("empty lag or frequency grid")
    c_max = float(np.max(np.abs(c)))
    if c_max < zero_tol:
        return SpectrumResult(omega, np.zeros(len(omega)), np.zeros(len(omega)), 0.0)
    if abs(c[-1]) > decay_tol * c_max:
        raise WindowError(
            f"correlation decayed only to {abs(c[-1]) / c_max:.2e} of its maximum by tau = {tau[-1]}"
        )
    w = np.empty_like(tau)
    dt = np.diff(tau)
    w[0] = dt[0] / 2
    w[-1] = dt[-1] / 2
    w[1:-1] = (dt[:-1] + dt[1:]) / 2
    wc = w * c
    raw = np.empty(len(omega))
    for i in range(0, len(omega), chunk):
        om = omega[i : i + chunk]
        raw[i : i + chunk] = np.real(np.exp(-1j * np.outer(om, tau)) @ wc)
    peak = raw.max(initial=0.0)
    if peak <= 0:
        if raw.min(initial=0.0) < 0:
            raise WindowError("spectrum is negative everywhere")
        return SpectrumResult(omega, np.zeros_like(raw), raw, 0.0)
    if raw.min() < -negative_tol * peak:
        raise WindowError(f"spectrum has a negative lobe of {raw.min() / peak:.2e} relative to its maximum")
    return SpectrumResult(omega, np.clip(raw, 0.0, None) / peak, raw, float(peak))


def find_peaks(spec: SpectrumResult, prominence: float = 1e-2):
    """Local maxima of a normalized spectrum with at least the given prominence."""
    idx, _ = _find_peaks(spec.intensities, prominence=prominence)
    return spec.omegas[idx], spec.intensities[idx]
