"""Model definition: parameters, correlation functions and HEOM coefficients.

Conventions
-----------
- hbar = 1. Frequencies are expressed in units of the TLS frequency, so the
  default ``omega0`` is 1.
- Basis ordering is ``(excited, ground)``. ``sigma_plus @ sigma_minus`` is
  therefore ``diag(1, 0)`` and the excited-state population is entry (0, 0).
- Density matrices are flattened row-major, so the superoperator of
  ``rho -> A @ rho @ B`` is ``kron(A, B.T)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field

import numpy as np

from .errors import ConfigurationError

SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
EXCITED = np.array([[1, 0], [0, 0]], dtype=complex)
GROUND = np.array([[0, 0], [0, 1]], dtype=complex)


class NoiseKind(enum.Enum):
    """The three Ornstein-Uhlenbeck processes of the stochastic field."""

    OMEGA = "omega"
    XI1 = "xi1"
    XI2 = "xi2"


class CouplingType(enum.Enum):
    RWA = "rwa"
    FULL = "full"


class BathAmplitude(enum.Enum):
    """Zero-lag amplitude of the bath correlation function.

    ``LORENTZIAN_FOURIER`` uses the Fourier transform of the Lorentzian
    spectral density, ``delta_b**2 * gamma_b``. ``BARE`` uses ``delta_b**2``.
    """

    LORENTZIAN_FOURIER = "lorentzian_fourier"
    BARE = "bare"


class FieldAmplitude(enum.Enum):
    """Zero-lag variance that a field coupling ``delta`` stands for.

    ``STD_DEV`` reads ``delta`` as the standard deviation of the process
    (variance ``delta**2``), which is what the hierarchy coefficients
    ``-i delta V^x`` generate. ``OVER_CUTOFF`` uses the variance
    ``delta**2 / gamma`` and rescales the coefficients by ``1/sqrt(gamma)``.
    """

    STD_DEV = "std_dev"
    OVER_CUTOFF = "over_cutoff"


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    COMMUTATOR = "commutator"


@dataclass(frozen=True)
class TlsParams:
    omega0: float = 1.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ConfigurationError(f"omega0 must be positive, got {self.omega0}", key="omega0")

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.omega0 * (SIGMA_PLUS @ SIGMA_MINUS)


@dataclass(frozen=True)
class OuProcess:
    """One Ornstein-Uhlenbeck process with correlation ``delta**2/gamma * exp(-gamma|t|)``."""

    kind: NoiseKind
    delta: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ConfigurationError(f"delta for {self.kind.value} must be >= 0", key=f"delta_{self.kind.value}")
        if not self.gamma > 0:
            raise ConfigurationError(
                f"gamma for {self.kind.value} must be > 0 (infinite correlation time unsupported)",
                key=f"gamma_{self.kind.value}",
            )

    @property
    def amplitude(self) -> float:
        return self.delta**2 / self.gamma


@dataclass(frozen=True)
class BathParams:
    delta_b: float = 0.0
    gamma_b: float = 1.0
    coupling: CouplingType = CouplingType.FULL
    amplitude_convention: BathAmplitude = BathAmplitude.LORENTZIAN_FOURIER

    def __post_init__(self):
        if not self.delta_b >= 0:
            raise ConfigurationError("delta_b must be >= 0", key="delta_b")
        if not self.gamma_b > 0:
            raise ConfigurationError("gamma_b must be > 0", key="gamma_b")
        if not isinstance(self.coupling, CouplingType):
            raise ConfigurationError(f"unknown coupling {self.coupling!r}", key="coupling")
        if not isinstance(self.amplitude_convention, BathAmplitude):
            raise ConfigurationError(
                f"unknown bath amplitude convention {self.amplitude_convention!r}", key="bath_amplitude"
            )

    @property
    def amplitude(self) -> float:
        """Zero-lag value of the bath correlation function."""
        if self.amplitude_convention is BathAmplitude.LORENTZIAN_FOURIER:
            return self.delta_b**2 * self.gamma_b
        return self.delta_b**2

    @property
    def lambda_b(self) -> float:
        # lambda_b * delta_b**2 / 2 must equal the correlation amplitude.
        if self.amplitude_convention is BathAmplitude.LORENTZIAN_FOURIER:
            return 2.0 * self.gamma_b
        return 2.0


def _default_field():
    return tuple(OuProcess(kind) for kind in NoiseKind)


@dataclass(frozen=True)
class ModelParams:
    """Complete parameter set of the TLS + stochastic field + bath model."""

    tls: TlsParams = dc_field(default_factory=TlsParams)
    field: tuple = dc_field(default_factory=_default_field)
    bath: BathParams = dc_field(default_factory=BathParams)
    field_amplitude: FieldAmplitude = FieldAmplitude.STD_DEV

    def __post_init__(self):
        kinds = tuple(p.kind for p in self.field)
        if kinds != tuple(NoiseKind):
            raise ConfigurationError("field must hold the processes (omega, xi1, xi2) in this order", key="field")
        if not isinstance(self.field_amplitude, FieldAmplitude):
            raise ConfigurationError(f"unknown field amplitude {self.field_amplitude!r}", key="field_amplitude")

    @classmethod
    def build(
        cls,
        *,
        omega0=1.0,
        gamma_f=1.0,
        delta_f=0.0,
        gamma_b=1.0,
        delta_b=0.0,
        coupling="full",
        bath_amplitude="lorentzian_fourier",
        field_amplitude="std_dev",
        **overrides,
    ) -> "ModelParams":
        """Build parameters with one shared (gamma_f, delta_f) for all field processes.

        Per-process values are given as ``gamma_omega``, ``delta_xi1`` etc.
        """
        procs = []
        for kind in NoiseKind:
            g = overrides.pop(f"gamma_{kind.value}", gamma_f)
            d = overrides.pop(f"delta_{kind.value}", delta_f)
            procs.append(OuProcess(kind, float(d), float(g)))
        if overrides:
            raise ConfigurationError(f"unknown model parameter(s): {sorted(overrides)}", key=sorted(overrides)[0])
        try:
            bath = BathParams(
                float(delta_b), float(gamma_b), CouplingType(coupling), BathAmplitude(bath_amplitude)
            )
            famp = FieldAmplitude(field_amplitude)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        return cls(TlsParams(float(omega0)), tuple(procs), bath, famp)

    @property
    def omega0(self) -> float:
        return self.tls.omega0

    def with_coupling(self, coupling: CouplingType) -> "ModelParams":
        return replace(self, bath=replace(self.bath, coupling=coupling))

    def field_variance(self, proc: OuProcess) -> float:
        return field_variance(proc, self.field_amplitude)

    @property
    def field_active(self) -> bool:
        return any(p.delta > 0 for p in self.field)

    @property
    def bath_active(self) -> bool:
        return self.bath.delta_b > 0

    def describe(self) -> dict:
        """Flat, JSON-friendly description used in output headers."""
        out = {"omega0": self.omega0}
        for p in self.field:
            out[f"gamma_{p.kind.value}"] = p.gamma
            out[f"delta_{p.kind.value}"] = p.delta
        out.update(
            gamma_b=self.bath.gamma_b,
            delta_b=self.bath.delta_b,
            coupling=self.bath.coupling.value,
            bath_amplitude=self.bath.amplitude_convention.value,
            lambda_b=self.bath.lambda_b,
            field_amplitude=self.field_amplitude.value,
        )
        return out


# --------------------------------------------------------------------------
# correlation functions


def lorentzian_spectral_density(omega, bath: BathParams, omega0: float = 1.0):
    """Lorentzian spectral density centred on the TLS frequency.

    Returns ``delta_b**2 gamma_b**2 / (pi ((omega - omega0)**2 + gamma_b**2))``.
    """
    omega = np.asarray(omega, dtype=float)
    g = bath.gamma_b
    return bath.delta_b**2 * g**2 / (np.pi * ((omega - omega0) ** 2 + g**2))


def ou_correlation(lag, proc: OuProcess):
    """``<nu(t) nu(t+lag)> = delta**2/gamma * exp(-gamma |lag|)``."""
    lag = np.asarray(lag, dtype=float)
    return proc.amplitude * np.exp(-proc.gamma * np.abs(lag))


def field_variance(proc: OuProcess, convention: FieldAmplitude) -> float:
    """Zero-lag variance of ``proc`` under the given field-amplitude convention."""
    if convention is FieldAmplitude.STD_DEV:
        return proc.delta**2
    if convention is FieldAmplitude.OVER_CUTOFF:
        return proc.delta**2 / proc.gamma
    raise ConfigurationError(f"unknown field amplitude convention {convention!r}", key="field_amplitude")


def bath_correlation(lag, bath: BathParams, omega0: float = 1.0):
    """Zero-temperature bath correlation ``A exp(-(gamma_b + i omega0) lag)`` for ``lag >= 0``."""
    lag = np.asarray(lag, dtype=float)
    if np.any(lag < 0):
        raise ValueError("bath_correlation is defined for non-negative lags only")
    return bath.amplitude * np.exp(-(bath.gamma_b + 1j * omega0) * lag)


def coupling_operator(coupling: CouplingType) -> np.ndarray:
    """System operator ``a`` of the bath interaction: sigma_- (RWA) or sigma_+ + sigma_- (full)."""
    if coupling is CouplingType.RWA:
        return SIGMA_MINUS.copy()
    if coupling is CouplingType.FULL:
        return SIGMA_PLUS + SIGMA_MINUS
    raise ConfigurationError(f"unknown coupling {coupling!r}", key="coupling")


def field_operator(kind: NoiseKind) -> np.ndarray:
    """System operator multiplying the field process ``kind`` in the stochastic Hamiltonian."""
    if kind is NoiseKind.OMEGA:
        return SIGMA_PLUS @ SIGMA_MINUS
    if kind is NoiseKind.XI1:
        return SIGMA_PLUS + SIGMA_MINUS
    return 1j * (SIGMA_PLUS - SIGMA_MINUS)


# --------------------------------------------------------------------------
# superoperators and the coefficient table


@dataclass(frozen=True)
class SuperopTerm:
    side: Side
    operator: np.ndarray
    scalar: complex = 1.0

    def matrix(self) -> np.ndarray:
        A = np.asarray(self.operator, dtype=complex)
        if self.side is Side.LEFT:
            m = np.kron(A, IDENTITY)
        elif self.side is Side.RIGHT:
            m = np.kron(IDENTITY, A.T)
        else:
            m = np.kron(A, IDENTITY) - np.kron(IDENTITY, A.T)
        return self.scalar * m

    def apply(self, rho: np.ndarray) -> np.ndarray:
        A = self.operator
        if self.side is Side.LEFT:
            out = A @ rho
        elif self.side is Side.RIGHT:
            out = rho @ A
        else:
            out = A @ rho - rho @ A
        return self.scalar * out


@dataclass(frozen=True)
class Superop:
    """Sum of left/right/commutator actions on a 2x2 matrix."""

    terms: tuple = ()

    def matrix(self) -> np.ndarray:
        m = np.zeros((4, 4), dtype=complex)
        for t in self.terms:
            m += t.matrix()
        return m

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((2, 2), dtype=complex)
        for t in self.terms:
            out += t.apply(rho)
        return out

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix())


@dataclass(frozen=True)
class Direction:
    """One hierarchy direction: decay constant plus lift and drop superoperators."""

    name: str
    alpha: complex
    lift: Superop  # acts on the ADM one level up (m + e_k)
    drop: Superop  # acts on the ADM one level down (m - e_k), times m_k

    @property
    def active(self) -> bool:
        return not (self.lift.is_zero and self.drop.is_zero)


@dataclass(frozen=True)
class CouplingTable:
    directions: tuple
    hamiltonian: np.ndarray

    def __len__(self):
        return len(self.directions)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([d.alpha for d in self.directions], dtype=complex)


DIRECTION_NAMES = ("omega", "xi1", "xi2", "bath_k1", "bath_k2")


def build_coupling_table(params: ModelParams) -> CouplingTable:
    """Decay constants and superoperators for the five hierarchy directions.

    Directions are ordered (omega, xi1, xi2, bath_k1, bath_k2). The bath
    direction ``k2`` decays like the bath correlation ``exp(-(gamma_b + i
    omega0) t)`` and ``k1`` like its complex conjugate.
    """
    if not isinstance(params.field_amplitude, FieldAmplitude):
        raise ConfigurationError("invalid field amplitude convention", key="field_amplitude")
    directions = []
    for proc in params.field:
        scale = math.sqrt(field_variance(proc, params.field_amplitude))
        phi = Superop((SuperopTerm(Side.COMMUTATOR, field_operator(proc.kind), -1j * scale),))
        directions.append(Direction(proc.kind.value, complex(-proc.gamma), phi, phi))

    bath = params.bath
    w0 = params.omega0
    c1 = coupling_operator(bath.coupling)
    c2 = c1.conj().T
    lam = bath.lambda_b
    half = bath.delta_b**2 / 2.0
    if half == 0.0:
        lam = 0.0
    directions.append(
        Direction(
            "bath_k1",
            -(bath.gamma_b - 1j * w0),
            Superop((SuperopTerm(Side.COMMUTATOR, c1, -lam),)),
            Superop((SuperopTerm(Side.RIGHT, c2, -half),)),
        )
    )
    directions.append(
        Direction(
            "bath_k2",
            -(bath.gamma_b + 1j * w0),
            Superop((SuperopTerm(Side.COMMUTATOR, c2, -lam),)),
            Superop((SuperopTerm(Side.LEFT, c1, half),)),
        )
    )
    return CouplingTable(tuple(directions), params.tls.hamiltonian)


# --------------------------------------------------------------------------
# density matrices


def validate_density_matrix(rho, tol: float = 1e-8) -> np.ndarray:
    """Return ``rho`` as a complex 2x2 array or raise if it is not a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ConfigurationError(f"density matrix must be 2x2, got shape {rho.shape}", key="rho0")
    if abs(np.trace(rho) - 1) > tol:
        raise ConfigurationError(f"density matrix trace is {np.trace(rho)}, expected 1", key="rho0")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ConfigurationError("density matrix is not Hermitian", key="rho0")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
        raise ConfigurationError("density matrix has negative eigenvalues", key="rho0")
    return rho
