"""Independent reference solutions.

- closed-form excited population for the RWA bath (damped Jaynes-Cummings),
- Gaussian-cumulant coherence envelope for pure OU dephasing,
- Monte Carlo averaging over sampled OU field realizations,
- a Lindblad (Markovian) baseline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, null_space

from .errors import ConfigurationError, ContractViolation
from .model import (
    IDENTITY,
    SIGMA_MINUS,
    SIGMA_PLUS,
    FieldAmplitude,
    ModelParams,
    NoiseKind,
    OuProcess,
    field_operator,
    field_variance,
    validate_density_matrix,
)

_KIND_COLUMN = {NoiseKind.OMEGA: 0, NoiseKind.XI1: 1, NoiseKind.XI2: 2}


# --------------------------------------------------------------------------
# analytic limits


def rwa_bath_excited_population(t, gamma_b: float, amplitude: float):
    """Exact excited population for the RWA bath with correlation ``A exp(-(gamma_b + i w0) t)``.

    ``c(t) = exp(-gamma_b t/2) [cosh(D t/2) + gamma_b/D sinh(D t/2)]`` with
    ``D = sqrt(gamma_b**2 - 4 A)``; the population is ``|c(t)|**2``.
    """
    t = np.asarray(t, dtype=float)
    D = np.sqrt(complex(gamma_b**2 - 4.0 * amplitude))
    x = 0.5 * t
    if abs(D) * max(float(np.max(x, initial=0.0)), 1.0) < 1e-7:
        # critical damping; second-order series in D
        c = np.exp(-gamma_b * x) * (1 + gamma_b * x + D**2 * (x**2 / 2 + gamma_b * x**3 / 6))
    else:
        c = np.exp(-gamma_b * x) * (np.cosh(D * x) + gamma_b / D * np.sinh(D * x))
    return np.abs(c) ** 2


def ou_dephasing_coherence(t, proc: OuProcess, convention: FieldAmplitude = FieldAmplitude.STD_DEV):
    """Envelope ``|rho_eg(t)| / |rho_eg(0)|`` for dephasing by one OU process.

    ``exp[-(c0/gamma**2) (gamma t - 1 + exp(-gamma t))]`` where ``c0`` is the
    zero-lag variance of the process under ``convention``.
    """
    if proc.kind is not NoiseKind.OMEGA:
        raise ValueError("the dephasing oracle applies to the omega process only")
    t = np.asarray(t, dtype=float)
    g = proc.gamma
    c0 = field_variance(proc, convention)
    return np.exp(-(c0 / g**2) * (g * t - 1.0 + np.exp(-g * t)))


# --------------------------------------------------------------------------
# Monte Carlo over field realizations


@dataclass(frozen=True)
class McConfig:
    n_trajectories: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    t_end: float = 50.0
    sample_stride: float = 0.5
    target_stderr: float | None = None
    chunk_steps: int = 1000

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ConfigurationError("n_trajectories must be >= 1", key="n_trajectories")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive", key="dt")
        if not self.t_end > 0:
            raise ConfigurationError("t_end must be positive", key="t_end")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer", key="seed")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def sample_every(self) -> int:
        return max(1, int(round(self.sample_stride / self.dt)))


def trajectory_rng(seed: int, trajectory: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, trajectory id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trajectory)])))


def _ou_step_constants(variance: float, gamma: float, dt: float):
    decay = math.exp(-gamma * dt)
    kick = math.sqrt(variance * -math.expm1(-2.0 * gamma * dt))
    return decay, kick


def sample_ou_path(proc: OuProcess, cfg: McConfig, stream: int, variance: float | None = None) -> np.ndarray:
    """One stationary OU realization on the grid ``0, dt, ..., n_steps*dt``.

    The stream draws three standard normals per grid point (one per field
    process) so the path equals the one used by :func:`monte_carlo_evolution`
    for trajectory ``stream``. ``variance`` defaults to ``delta**2/gamma``.
    """
    var = proc.amplitude if variance is None else float(variance)
    n = cfg.n_steps
    col = _KIND_COLUMN[proc.kind]
    rng = trajectory_rng(cfg.seed, stream)
    eta = rng.standard_normal((n + 1, 3))[:, col]
    if var == 0.0:
        return np.zeros(n + 1)
    decay, kick = _ou_step_constants(var, proc.gamma, cfg.dt)
    x = np.empty(n + 1)
    x[0] = math.sqrt(var) * eta[0]
    for i in range(n):
        x[i + 1] = x[i] * decay + kick * eta[i + 1]
    return x


@dataclass
class McResult:
    times: np.ndarray
    mean: np.ndarray  # (n_samples, 2, 2)
    stderr: np.ndarray  # (n_samples, 2, 2) complex: stderr of real and imaginary parts
    n_trajectories: int
    warning: str | None = None

    @property
    def populations(self) -> np.ndarray:
        return self.mean[:, 0, 0].real

    @property
    def coherences(self) -> np.ndarray:
        return self.mean[:, 0, 1]


def monte_carlo_evolution(params: ModelParams, rho0, cfg: McConfig) -> McResult:
    """Average the stochastic-Hamiltonian evolution over sampled field paths.

    Each realization holds every process constant over a ``dt`` interval at
    the mean of its end-point values and applies the exact 2x2 propagator.
    The bath must be switched off.
    """
    if params.bath_active:
        raise ContractViolation("the Monte Carlo oracle covers the stochastic field only")
    rho0 = validate_density_matrix(rho0)
    n_traj = cfg.n_trajectories
    n_steps = cfg.n_steps
    every = cfg.sample_every
    sample_idx = np.arange(0, n_steps + 1, every)
    times = sample_idx * cfg.dt

    weights, vecs = np.linalg.eigh(rho0)
    keep = weights > 1e-14
    weights, vecs = weights[keep], vecs[:, keep]

    var = np.array([field_variance(p, params.field_amplitude) for p in params.field])
    consts = [_ou_step_constants(v, p.gamma, cfg.dt) for v, p in zip(var, params.field)]
    decay = np.array([c[0] for c in consts])
    kick = np.array([c[1] for c in consts])
    w0 = params.omega0

    rngs = [trajectory_rng(cfg.seed, k) for k in range(n_traj)]
    x = np.stack([g.standard_normal(3) for g in rngs]) * np.sqrt(var)  # (n_traj, 3)

    # psi[:, j, :] is eigenvector j of rho0 for every trajectory
    psi = np.broadcast_to(vecs.T[None, :, :], (n_traj, len(weights), 2)).astype(complex).copy()
    samples = np.empty((len(sample_idx), n_traj, 2, 2), dtype=complex)

    def record(slot):
        rho = np.einsum("j,tja,tjb->tab", weights, psi, psi.conj())
        samples[slot] = rho

    record(0)
    next_sample = 1
    step = 0
    while step < n_steps:
        k = min(cfg.chunk_steps, n_steps - step)
        eta = np.stack([g.standard_normal((k, 3)) for g in rngs], axis=1)  # (k, n_traj, 3)
        for i in range(k):
            x_new = x * decay + kick * eta[i]
            mid = 0.5 * (x + x_new)
            x = x_new
            # H = (w0 + Omega) |e><e| + xi1 sigma_x + xi2 * i(sigma_+ - sigma_-)
            bz = 0.5 * (w0 + mid[:, 0])
            bx = mid[:, 1]
            by = -mid[:, 2]
            norm = np.sqrt(bx * bx + by * by + bz * bz)
            theta = norm * cfg.dt
            c = np.cos(theta)
            s_over = np.where(norm > 0, np.sin(theta) / np.where(norm > 0, norm, 1.0), cfg.dt)
            u00 = c - 1j * s_over * bz
            u11 = c + 1j * s_over * bz
            u01 = -1j * s_over * (bx - 1j * by)
            u10 = -1j * s_over * (bx + 1j * by)
            a = psi[:, :, 0]
            b = psi[:, :, 1]
            psi = np.stack([u00[:, None] * a + u01[:, None] * b, u10[:, None] * a + u11[:, None] * b], axis=-1)
            step += 1
            if next_sample < len(sample_idx) and step == sample_idx[next_sample]:
                record(next_sample)
                next_sample += 1

    mean = samples.mean(axis=1)
    if n_traj > 1:
        se = (samples.real.std(axis=1, ddof=1) + 1j * samples.imag.std(axis=1, ddof=1)) / math.sqrt(n_traj)
    else:
        se = np.full_like(mean, np.inf + 1j * np.inf)
    warning = None
    if cfg.target_stderr is not None:
        worst = float(max(se.real.max(), se.imag.max()))
        if worst > cfg.target_stderr:
            warning = (
                f"standard error {worst:.2e} exceeds the requested {cfg.target_stderr:.2e}; "
                f"about {int(n_traj * (worst / cfg.target_stderr) ** 2) + 1} trajectories needed"
            )
            warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return McResult(times, mean, se, n_traj, warning)


# --------------------------------------------------------------------------
# Lindblad baseline


def _dissipator(L: np.ndarray, rate: float) -> np.ndarray:
    """Row-major superoperator of ``rate (L rho L+ - {L+L, rho}/2)``."""
    Ld = L.conj().T
    LdL = Ld @ L
    return rate * (np.kron(L, L.conj()) - 0.5 * np.kron(LdL, IDENTITY) - 0.5 * np.kron(IDENTITY, LdL.T))


def markov_rates(params: ModelParams, field_rates: str = "white_noise") -> dict:
    """Rate constants of the Lindblad baseline.

    ``bath_decay`` is ``2 Re int_0^inf C(t) exp(i w0 t) dt = 2 A / gamma_b``
    (equal to ``2 pi J(w0)`` for the Lorentzian-Fourier amplitude).

    For the field, ``field_rates="white_noise"`` replaces every OU process
    by white noise of the same zero-frequency power ``2 c0 / gamma`` (flat
    spectral density). ``"bloch_redfield"`` takes the transverse rates from
    the process spectra at ``w0``, ``2 c0 gamma / (gamma**2 + w0**2)``, and the
    dephasing rate from zero frequency.
    """
    if field_rates not in ("white_noise", "bloch_redfield"):
        raise ConfigurationError(f"unknown Markov field rates {field_rates!r}", key="markov_field_rates")
    bath = params.bath
    w0 = params.omega0
    rates = {"bath_decay": 2.0 * bath.amplitude / bath.gamma_b if params.bath_active else 0.0}
    for p in params.field:
        c0 = field_variance(p, params.field_amplitude)
        zero = 2.0 * c0 / p.gamma
        if field_rates == "white_noise" or p.kind is NoiseKind.OMEGA:
            rates[p.kind.value] = zero
        else:
            rates[p.kind.value] = 2.0 * c0 * p.gamma / (p.gamma**2 + w0**2)
    rates["field_rates"] = field_rates
    return rates


def lindblad_generator(params: ModelParams, field_rates: str = "white_noise") -> tuple[np.ndarray, dict]:
    rates = markov_rates(params, field_rates)
    H = params.tls.hamiltonian
    Lsup = -1j * (np.kron(H, IDENTITY) - np.kron(IDENTITY, H.T))
    Lsup = Lsup + _dissipator(SIGMA_MINUS, rates["bath_decay"])
    if field_rates == "white_noise":
        for kind in NoiseKind:
            Lsup = Lsup + _dissipator(field_operator(kind), rates[kind.value])
    else:
        Lsup = Lsup + _dissipator(field_operator(NoiseKind.OMEGA), rates["omega"])
        transverse = rates["xi1"] + rates["xi2"]
        Lsup = Lsup + _dissipator(SIGMA_MINUS, transverse) + _dissipator(SIGMA_PLUS, transverse)
    return Lsup, rates


@dataclass
class LindbladResult:
    times: np.ndarray
    states: np.ndarray
    rates: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return self.states[:, 0, 0].real


def lindblad_evolution(params: ModelParams, rho0, t_grid, field_rates: str = "white_noise") -> LindbladResult:
    """Markovian baseline; bath coupling is always treated in the RWA."""
    rho0 = validate_density_matrix(rho0)
    t = np.asarray(t_grid, dtype=float)
    Lsup, rates = lindblad_generator(params, field_rates)
    vals, vecs = np.linalg.eig(Lsup)
    cond = np.linalg.cond(vecs)
    v0 = rho0.reshape(-1)
    if cond < 1e8:
        coef = np.linalg.solve(vecs, v0)
        out = (vecs[None, :, :] * np.exp(np.outer(t, vals))[:, None, :]) @ coef
    else:  # defective generator: fall back to matrix exponentials
        out = np.array([expm(Lsup * ti) @ v0 for ti in t])
    states = out.reshape(len(t), 2, 2)
    states = 0.5 * (states + states.conj().transpose(0, 2, 1))
    return LindbladResult(t, states, rates)


def lindblad_steady_state(params: ModelParams, field_rates: str = "white_noise") -> np.ndarray:
    Lsup, _ = lindblad_generator(params, field_rates)
    ns = null_space(Lsup)
    if ns.shape[1] != 1:
        raise ContractViolation(f"Lindblad generator has a {ns.shape[1]}-dimensional null space")
    rho = ns[:, 0].reshape(2, 2)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def lindblad_correlation(params: ModelParams, tau_grid, field_rates: str = "white_noise") -> np.ndarray:
    """Stationary ``<sigma_+(t + tau) sigma_-(t)>`` of the Lindblad baseline (quantum regression)."""
    Lsup, _ = lindblad_generator(params, field_rates)
    rho_ss = lindblad_steady_state(params, field_rates)
    tau = np.asarray(tau_grid, dtype=float)
    x0 = (SIGMA_MINUS @ rho_ss).reshape(-1)
    vals, vecs = np.linalg.eig(Lsup)
    if np.linalg.cond(vecs) < 1e8:
        coef = np.linalg.solve(vecs, x0)
        # only the [ground, excited] entry is needed
        return (vecs[2][None, :] * np.exp(np.outer(tau, vals))) @ coef
    return np.array([(expm(Lsup * t) @ x0)[2] for t in tau])
