"""Time integration of the hierarchy and steady-state detection."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import DOP853, RK45

from .errors import ContractViolation, IntegrationError, NonConvergenceError, StiffnessError
from .hierarchy import Generator, HierarchyLayout, HierarchyState
from .model import EXCITED, validate_density_matrix

logger = logging.getLogger(__name__)

_METHODS = {"DOP853": DOP853, "RK45": RK45}
DEFAULT_START_DEPTH = 4
DEFAULT_MAX_DEPTH = 40


@dataclass(frozen=True)
class PropagationConfig:
    """Integrator and sampling settings (times in units of 1/omega0)."""

    t_end: float = 50.0
    dt_init: float = 1e-2
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    sample_stride: float = 0.1
    steady_tol: float = 1e-9
    steady_window: float = 20.0
    method: str = "DOP853"
    invariant_tol: float = 1e-8
    scaled: bool = True  # integrate the balanced rho_m / slot_scale instead of the bare ADMs
    # step cap = stability_factor / (row-sum bound on the generator); 0 disables it
    stability_factor: float = 8.0

    def __post_init__(self):
        for name in ("t_end", "dt_init", "rel_tol", "abs_tol", "sample_stride", "steady_tol", "steady_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.stability_factor >= 0:
            raise ValueError("stability_factor must be non-negative")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {sorted(_METHODS)}")


@dataclass
class Trajectory:
    """Sampled physical states plus the full hierarchy at the last sample.

    ``max_error_estimate`` accumulates, over all steps, the bound
    ``sqrt(n) * (abs_tol + rel_tol * max|rho|)`` on the local error of any
    physical-slot entry implied by the integrator's RMS error control.
    """

    times: np.ndarray
    physical_states: np.ndarray  # (n_samples, 2, 2)
    final_hierarchy: HierarchyState
    n_steps: int = 0
    max_error_estimate: float = 0.0

    @property
    def populations(self) -> np.ndarray:
        return self.physical_states[:, 0, 0].real

    @property
    def coherences(self) -> np.ndarray:
        return self.physical_states[:, 0, 1]


@dataclass
class SteadyState:
    """Result of :func:`find_steady_state`.

    ``rho`` is the physical density matrix, ``time`` the detection time and
    ``hierarchy`` the full hierarchy at that time.
    """

    rho: np.ndarray
    time: float
    hierarchy: HierarchyState
    variation: float
    converged: bool = True
    generator: Generator | None = field(default=None, repr=False)

    def __iter__(self):
        # allows ``rho, t = find_steady_state(...)``
        yield self.rho
        yield self.time


def initial_state(rho0, layout: HierarchyLayout) -> HierarchyState:
    """Factorized initial condition: ``rho0`` in slot 0, every ADM zero."""
    rho0 = validate_density_matrix(rho0)
    state = HierarchyState.zeros(layout)
    state.data[0] = rho0
    return state


def check_physical(rho: np.ndarray, tol: float, t: float | None = None):
    tr = abs(np.trace(rho) - 1.0)
    herm = np.max(np.abs(rho - rho.conj().T))
    if tr > tol or herm > tol:
        raise IntegrationError(
            f"physical slot lost trace/Hermiticity (trace defect {tr:.3g}, Hermiticity defect {herm:.3g})",
            t_reached=t,
        )


class _Stepper:
    """Adaptive embedded Runge-Kutta stepping with sampling of slot 0 only.

    The physical slot has unit scale, so samples read directly from the
    solver state whether or not the ADMs are rescaled.
    """

    def __init__(self, gen: Generator, state: HierarchyState, cfg: PropagationConfig, t0: float = 0.0, t_bound=None):
        if not gen.layout.same_as(state.layout):
            raise ContractViolation("state layout does not match the generator layout")
        self.gen = gen
        self.cfg = cfg
        self._work = np.empty(gen.shape[0], dtype=complex)
        self.n_steps = 0
        self.max_err = 0.0
        self._rms_factor = float(np.sqrt(gen.shape[0]))
        if cfg.scaled:
            matrix = gen.scaled_matrix
            self._scale = np.repeat(gen.slot_scale, 4)
            y0 = state.vector() / self._scale
            bound = gen.scaled_norm_bound
        else:
            matrix = gen.matrix
            self._scale = None
            y0 = state.vector().copy()
            bound = float(abs(matrix).sum(axis=1).max())
        # Without a cap the error control accepts steps beyond the stability
        # boundary of the fastest hierarchy modes while those modes hold only
        # rounding noise; the amplified noise then shows up in slot 0 as a
        # Hermiticity defect of order the tolerances.
        max_step = np.inf
        if cfg.stability_factor > 0 and bound > 0:
            max_step = cfg.stability_factor / bound

        def rhs(t, y):
            return matrix @ y

        solver_cls = _METHODS[cfg.method]
        self.solver = solver_cls(
            rhs,
            t0,
            y0,
            t_bound if t_bound is not None else np.inf,
            rtol=cfg.rel_tol,
            atol=cfg.abs_tol,
            first_step=min(cfg.dt_init, max_step),
            max_step=max_step,
            vectorized=False,
        )

    @property
    def t(self) -> float:
        return self.solver.t

    @property
    def y(self) -> np.ndarray:
        return self.solver.y

    def advance(self, sample_times: np.ndarray) -> np.ndarray:
        """Step until the last sample time; return slot 0 at each sample."""
        out = np.empty((len(sample_times), 2, 2), dtype=complex)
        i = 0
        # samples at the current time need no stepping
        while i < len(sample_times) and sample_times[i] <= self.solver.t:
            out[i] = self.solver.y[:4].reshape(2, 2)
            i += 1
        while i < len(sample_times):
            t_prev = self.solver.t
            msg = self.solver.step()
            if self.solver.status == "failed":
                if msg and "step size" in msg.lower():
                    raise StiffnessError(f"step size underflow at t = {t_prev:.6g}: {msg}", t_reached=t_prev)
                raise IntegrationError(f"integration failed at t = {t_prev:.6g}: {msg}", t_reached=t_prev)
            self.n_steps += 1
            # accepted steps keep the RMS of err/(atol + rtol|y|) below 1, so no
            # single component errs by more than sqrt(n) times its tolerance
            self.max_err += self._rms_factor * (
                self.cfg.abs_tol + self.cfg.rel_tol * float(np.max(np.abs(self.solver.y[:4])))
            )
            t_now = self.solver.t
            j = i
            while j < len(sample_times) and sample_times[j] <= t_now:
                j += 1
            if j > i:
                if sample_times[j - 1] == t_now:
                    dense_times = sample_times[i : j - 1]
                    out[j - 1] = self.solver.y[:4].reshape(2, 2)
                else:
                    dense_times = sample_times[i:j]
                if len(dense_times):
                    interp = self.solver.dense_output()
                    vals = interp(dense_times)[:4]
                    out[i : i + len(dense_times)] = vals.T.reshape(-1, 2, 2)
                i = j
            if self.solver.status == "finished" and i < len(sample_times):
                raise IntegrationError("integration bound reached before the last sample", t_reached=t_now)
        return out

    def state(self) -> HierarchyState:
        y = self.solver.y if self._scale is None else self.solver.y * self._scale
        return HierarchyState(self.gen.layout, y.copy())


def sample_grid(t0: float, t1: float, stride: float) -> np.ndarray:
    n = int(np.floor((t1 - t0) / stride + 1e-9))
    grid = t0 + stride * np.arange(n + 1)
    if t1 - grid[-1] > 1e-9 * max(1.0, abs(t1)):
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    return grid


def propagate(
    gen: Generator,
    state: HierarchyState,
    cfg: PropagationConfig,
    *,
    times=None,
    check_invariants: bool = True,
) -> Trajectory:
    """Integrate ``dS/dt = G S`` from t = 0 to ``cfg.t_end``.

    The physical slot is sampled every ``cfg.sample_stride`` (or on ``times``
    when given). With ``check_invariants`` each sample must keep unit trace
    and Hermiticity to ``cfg.invariant_tol``.
    """
    if times is None:
        times = sample_grid(0.0, cfg.t_end, cfg.sample_stride)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("sample times must be ascending and non-negative")
    stepper = _Stepper(gen, state, cfg, t0=0.0, t_bound=float(times[-1]))
    samples = stepper.advance(times)
    if check_invariants:
        for t, rho in zip(times, samples):
            check_physical(rho, cfg.invariant_tol, t)
    return Trajectory(times, samples, stepper.state(), stepper.n_steps, stepper.max_err)


def find_steady_state(
    gen: Generator,
    state: HierarchyState,
    cfg: PropagationConfig,
) -> SteadyState:
    """Propagate until slot 0 stops changing.

    The state is converged once the sup-norm variation of the physical
    density matrix over the last ``cfg.steady_window`` drops below
    ``cfg.steady_tol``. Raises :class:`NonConvergenceError` if that does not
    happen before ``cfg.t_end``.
    """
    if not any(gen.layout.active):
        raise NonConvergenceError("no dissipative coupling is active, so there is no unique steady state")
    stepper = _Stepper(gen, state, cfg, t0=0.0, t_bound=np.inf)
    t = 0.0
    variation = np.inf
    while t < cfg.t_end - 1e-12:
        t_next = min(t + cfg.steady_window, cfg.t_end)
        grid = sample_grid(t, t_next, cfg.sample_stride)
        samples = stepper.advance(grid)
        for s, rho in zip(grid, samples):
            check_physical(rho, cfg.invariant_tol, s)
        flat = samples.reshape(len(grid), -1)
        flat = np.concatenate([flat.real, flat.imag], axis=1)
        variation = float(np.max(np.abs(flat.max(axis=0) - flat.min(axis=0))))
        t = t_next
        full_window = grid[-1] - grid[0] >= cfg.steady_window * (1 - 1e-9)
        logger.debug("steady-state window ending at t=%.3f: variation %.3e", t, variation)
        if full_window and variation < cfg.steady_tol:
            rho = samples[-1].copy()
            return SteadyState(rho, t, stepper.state(), variation, True, gen)
    raise NonConvergenceError(
        f"no steady state within t_end = {cfg.t_end} (last window variation {variation:.3e})",
        last_variation=variation,
    )


def excited_initial_state(layout: HierarchyLayout) -> HierarchyState:
    return initial_state(EXCITED, layout)


def nullspace_steady_state(gen: Generator) -> np.ndarray:
    """Steady physical state from a direct sparse solve of ``G S = 0``.

    The equation for ``rho_00`` is replaced by the unit-trace condition. Meant
    as a cross-check of :func:`find_steady_state` at small depth.
    """
    a = gen.matrix.tolil(copy=True)
    a[0, :] = 0
    a[0, 0] = 1.0
    a[0, 3] = 1.0
    rhs = np.zeros(gen.shape[0], dtype=complex)
    rhs[0] = 1.0
    try:
        x = spla.spsolve(a.tocsc(), rhs)
    except RuntimeError as exc:  # singular factorization
        raise NonConvergenceError(f"steady-state solve failed: {exc}", last_variation=np.inf) from exc
    if not np.all(np.isfinite(x)):
        raise NonConvergenceError("steady-state solve is singular (no unique steady state)", last_variation=np.inf)
    return x[:4].reshape(2, 2)


@dataclass
class DepthConvergence:
    """Outcome of :func:`converge_depth`.

    ``value`` is the observable at the accepted ``depth``; ``refined`` the same
    observable at ``depth + step``; ``difference`` their sup-norm distance.
    """

    depth: int
    value: np.ndarray
    refined: np.ndarray
    difference: float
    history: dict = field(default_factory=dict)


def converge_depth(
    evaluate: Callable[[int], np.ndarray],
    start: int = DEFAULT_START_DEPTH,
    *,
    step: int = 2,
    tol: float = 1e-5,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> DepthConvergence:
    """Raise the hierarchy depth until ``evaluate(L)`` and ``evaluate(L + step)`` agree.

    ``evaluate`` maps a depth to an array of observables. Each depth is
    evaluated once. Raises :class:`NonConvergenceError` if no accepted depth
    is found with ``L + step <= max_depth``.
    """
    if start < 0 or step < 1:
        raise ValueError("start must be >= 0 and step >= 1")
    history: dict[int, np.ndarray] = {}

    def value_at(depth):
        if depth not in history:
            history[depth] = np.asarray(evaluate(depth))
        return history[depth]

    depth = start
    diff = np.inf
    while depth + step <= max_depth:
        lo, hi = value_at(depth), value_at(depth + step)
        if lo.shape != hi.shape:
            raise ContractViolation("observable shape changed with depth")
        diff = float(np.max(np.abs(hi - lo))) if lo.size else 0.0
        logger.info("depth %d vs %d: sup-norm difference %.3e", depth, depth + step, diff)
        if diff < tol:
            return DepthConvergence(depth, lo, hi, diff, history)
        depth += step
    raise NonConvergenceError(
        f"observables not converged in depth up to {max_depth} (last difference {diff:.3e})",
        last_variation=diff,
    )
