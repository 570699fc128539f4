import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid

from heom_qubit.errors import ConfigurationError
from heom_qubit.model import (
    EXCITED,
    GROUND,
    SIGMA_MINUS,
    SIGMA_PLUS,
    BathAmplitude,
    BathParams,
    CouplingType,
    FieldAmplitude,
    ModelParams,
    NoiseKind,
    OuProcess,
    Side,
    SuperopTerm,
    TlsParams,
    bath_correlation,
    build_coupling_table,
    coupling_operator,
    field_operator,
    field_variance,
    lorentzian_spectral_density,
    ou_correlation,
    validate_density_matrix,
)


def test_basis_and_ladder_operators():
    assert np.allclose(SIGMA_PLUS @ SIGMA_MINUS, EXCITED)
    assert np.allclose(SIGMA_MINUS @ SIGMA_PLUS, GROUND)
    assert np.allclose(TlsParams(1.5).hamiltonian, 1.5 * EXCITED)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_tls_rejects_non_positive_frequency(bad):
    with pytest.raises(ConfigurationError):
        TlsParams(bad)


@pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"gamma": -0.1}, {"delta": -0.2}])
def test_ou_process_validation(kw):
    with pytest.raises(ConfigurationError):
        OuProcess(NoiseKind.OMEGA, **{"delta": 0.1, "gamma": 1.0, **kw})


def test_bath_validation():
    with pytest.raises(ConfigurationError):
        BathParams(delta_b=0.1, gamma_b=0.0)
    with pytest.raises(ConfigurationError):
        BathParams(delta_b=-0.1, gamma_b=1.0)


class TestLorentzian:
    bath = BathParams(delta_b=0.6, gamma_b=0.2)

    def test_peak_value(self):
        assert lorentzian_spectral_density(1.0, self.bath) == pytest.approx(0.36 / math.pi, rel=1e-14)

    def test_half_width(self):
        for w in (1.2, 0.8):
            assert lorentzian_spectral_density(w, self.bath) == pytest.approx(0.36 / (2 * math.pi), rel=1e-12)

    def test_integral_is_amplitude(self):
        val, _ = quad(lambda w: lorentzian_spectral_density(w, self.bath), -np.inf, np.inf, points=None, limit=400)
        assert val == pytest.approx(0.36 * 0.2, rel=1e-8)

    def test_even_positive_and_peaked(self):
        d = np.linspace(0.01, 5, 50)
        left = lorentzian_spectral_density(1 - d, self.bath)
        right = lorentzian_spectral_density(1 + d, self.bath)
        assert np.allclose(left, right, rtol=1e-13)
        assert np.all(left > 0) and np.all(left < lorentzian_spectral_density(1.0, self.bath))


class TestOuCorrelation:
    proc = OuProcess(NoiseKind.XI1, delta=math.sqrt(0.4), gamma=0.2)

    def test_zero_lag_value(self):
        assert ou_correlation(0.0, self.proc) == pytest.approx(2.0, rel=1e-13)

    def test_one_e_fold(self):
        assert ou_correlation(1 / 0.2, self.proc) == pytest.approx(2.0 / math.e, rel=1e-13)

    def test_decays_and_symmetric(self):
        assert ou_correlation(1e4, self.proc) < 1e-300
        lags = np.linspace(0, 20, 11)
        assert np.allclose(ou_correlation(lags, self.proc), ou_correlation(-lags, self.proc))
        assert np.all(ou_correlation(lags, self.proc) > 0)


def test_field_variance_conventions():
    p = OuProcess(NoiseKind.OMEGA, delta=0.8, gamma=0.4)
    assert field_variance(p, FieldAmplitude.STD_DEV) == pytest.approx(0.64)
    assert field_variance(p, FieldAmplitude.OVER_CUTOFF) == pytest.approx(1.6)


class TestBathCorrelation:
    def test_fourier_amplitude_matches_numerical_transform(self):
        bath = BathParams(delta_b=0.6, gamma_b=0.2)
        # C(0) = int J(w) dw over a wide window
        w = np.linspace(1 - 4000 * 0.2, 1 + 4000 * 0.2, 2_000_001)
        numeric = trapezoid(lorentzian_spectral_density(w, bath), w)
        assert bath_correlation(0.0, bath) == pytest.approx(numeric, rel=1e-3)
        assert bath_correlation(0.0, bath) == pytest.approx(0.36 * 0.2, rel=1e-14)

    def test_bare_amplitude(self):
        bath = BathParams(delta_b=0.6, gamma_b=0.2, amplitude_convention=BathAmplitude.BARE)
        assert bath_correlation(0.0, bath) == pytest.approx(0.36, rel=1e-14)

    def test_modulus_decay(self):
        bath = BathParams(delta_b=0.6, gamma_b=0.3)
        lag = np.linspace(0, 10, 7)
        ratio = np.abs(bath_correlation(lag, bath)) / abs(bath_correlation(0.0, bath))
        assert np.allclose(ratio, np.exp(-0.3 * lag), rtol=1e-13)

    def test_finite_lag_matches_numerical_transform(self):
        bath = BathParams(delta_b=0.5, gamma_b=0.5)
        lag = 1.7
        # C(t) = int J(w) e^{-i w t} dw = e^{-i w0 t} 2 int_0^inf J(w0 + u) cos(u t) du
        half, _ = quad(lambda u: lorentzian_spectral_density(1.0 + u, bath), 0, np.inf, weight="cos", wvar=lag)
        assert bath_correlation(lag, bath) == pytest.approx(2 * half * np.exp(-1j * lag), abs=1e-8)

    def test_negative_lag_rejected(self):
        with pytest.raises(ValueError):
            bath_correlation(-1.0, BathParams(0.5, 0.5))


class TestCouplingOperators:
    def test_rwa_single_entry(self):
        a = coupling_operator(CouplingType.RWA)
        assert np.count_nonzero(a) == 1 and a[1, 0] == 1

    def test_full_pauli_x(self):
        a = coupling_operator(CouplingType.FULL)
        assert np.allclose(a, a.conj().T)
        assert np.trace(a) == 0
        assert np.allclose(np.linalg.eigvalsh(a), [-1, 1])

    def test_full_minus_rwa_is_raising(self):
        assert np.allclose(coupling_operator(CouplingType.FULL) - coupling_operator(CouplingType.RWA), SIGMA_PLUS)

    def test_field_operators(self):
        assert np.allclose(field_operator(NoiseKind.OMEGA), EXCITED)
        assert np.allclose(field_operator(NoiseKind.XI1), SIGMA_PLUS + SIGMA_MINUS)
        assert np.allclose(field_operator(NoiseKind.XI2), 1j * (SIGMA_PLUS - SIGMA_MINUS))
        for k in NoiseKind:
            v = field_operator(k)
            assert np.allclose(v, v.conj().T)


class TestCouplingTable:
    def test_all_zero_couplings_give_zero_superoperators(self):
        table = build_coupling_table(ModelParams.build(delta_f=0.0, delta_b=0.0))
        for d in table.directions:
            assert d.lift.is_zero and d.drop.is_zero and not d.active

    def test_alpha_structure(self):
        p = ModelParams.build(gamma_f=0.3, delta_f=0.2, gamma_b=0.4, delta_b=0.5, gamma_xi2=0.7)
        alphas = build_coupling_table(p).alphas
        assert np.allclose(alphas[:3], [-0.3, -0.3, -0.7])
        assert np.all(alphas[:3].imag == 0)
        assert alphas[3] == pytest.approx(np.conj(alphas[4]))
        assert alphas[3] == pytest.approx(-(0.4 - 1j))

    def test_omega_lift_annihilates_identity(self):
        table = build_coupling_table(ModelParams.build(delta_f=0.5))
        assert np.allclose(table.directions[0].lift.apply(np.eye(2)), 0)

    def test_field_superoperators_printed_form(self):
        p = ModelParams.build(gamma_f=0.4, delta_f=0.8)
        rho = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, 0.7]])
        for k, d in zip(NoiseKind, build_coupling_table(p).directions):
            V = field_operator(k)
            expect = -1j * 0.8 * (V @ rho - rho @ V)
            assert np.allclose(d.lift.apply(rho), expect)
            assert np.allclose(d.drop.apply(rho), expect)

    def test_over_cutoff_rescales_field_strength(self):
        p = ModelParams.build(gamma_f=0.4, delta_f=0.8, field_amplitude="over_cutoff")
        rho = np.array([[0.0, 1.0], [0.0, 0.0]])
        d = build_coupling_table(p).directions[1]
        V = field_operator(NoiseKind.XI1)
        assert np.allclose(d.lift.apply(rho), -1j * (0.8 / math.sqrt(0.4)) * (V @ rho - rho @ V))

    @pytest.mark.parametrize("coupling", ["rwa", "full"])
    def test_bath_superoperators(self, coupling):
        p = ModelParams.build(gamma_b=0.4, delta_b=0.6, coupling=coupling)
        table = build_coupling_table(p)
        a = coupling_operator(CouplingType(coupling))
        rho = np.array([[0.2, 0.3j], [-0.3j, 0.8]])
        k1, k2 = table.directions[3:]
        lam = 2 * 0.4
        assert np.allclose(k1.lift.apply(rho), -lam * (a @ rho - rho @ a))
        assert np.allclose(k2.lift.apply(rho), -lam * (a.T @ rho - rho @ a.T))
        assert np.allclose(k1.drop.apply(rho), -0.18 * rho @ a.T)
        assert np.allclose(k2.drop.apply(rho), 0.18 * a @ rho)
        # first-tier product recovers the bath correlation amplitude
        assert lam * 0.18 == pytest.approx(p.bath.amplitude)

    def test_bare_convention_lambda(self):
        b = BathParams(0.6, 0.4, amplitude_convention=BathAmplitude.BARE)
        assert b.lambda_b == 2.0 and b.amplitude == pytest.approx(0.36)


def test_superop_term_matrix_matches_action():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    for side in Side:
        term = SuperopTerm(side, A, 0.3 - 0.2j)
        assert np.allclose(term.matrix() @ rho.reshape(-1), term.apply(rho).reshape(-1))


class TestModelParams:
    def test_build_shares_field_parameters(self):
        p = ModelParams.build(gamma_f=0.2, delta_f=0.4)
        assert all(q.gamma == 0.2 and q.delta == 0.4 for q in p.field)

    def test_per_process_override(self):
        p = ModelParams.build(gamma_f=0.2, delta_f=0.4, delta_omega=0.0, gamma_xi1=0.9)
        assert p.field[0].delta == 0.0 and p.field[1].gamma == 0.9 and p.field[2].gamma == 0.2

    def test_unknown_override_names_key(self):
        with pytest.raises(ConfigurationError) as err:
            ModelParams.build(tempreature=3)
        assert err.value.key == "tempreature"

    def test_invalid_convention(self):
        with pytest.raises(ConfigurationError):
            ModelParams.build(coupling="sideways")
        with pytest.raises(ConfigurationError):
            ModelParams.build(field_amplitude="loud")

    def test_describe_is_flat(self):
        d = ModelParams.build(delta_b=0.3).describe()
        assert d["coupling"] == "full" and d["delta_b"] == 0.3 and "lambda_b" in d
        assert all(not isinstance(v, (dict, list)) for v in d.values())

    def test_activity_flags(self):
        assert not ModelParams.build().field_active
        assert ModelParams.build(delta_f=0.1).field_active
        assert ModelParams.build(delta_b=0.1).bath_active


class TestDensityMatrix:
    def test_accepts_valid(self):
        validate_density_matrix(np.eye(2) / 2)

    @pytest.mark.parametrize(
        "rho",
        [np.eye(2), np.array([[1, 0.1], [0.2, 0]]), np.diag([1.5, -0.5]), np.eye(3) / 3],
    )
    def test_rejects_invalid(self, rho):
        with pytest.raises(ConfigurationError):
            validate_density_matrix(rho)


@settings(max_examples=50, deadline=None)
@given(
    lag=st.floats(0, 50),
    gamma=st.floats(0.05, 5),
    delta=st.floats(0, 2),
)
def test_ou_correlation_bounded_by_zero_lag(lag, gamma, delta):
    p = OuProcess(NoiseKind.XI2, delta, gamma)
    assert 0 <= ou_correlation(lag, p) <= ou_correlation(0.0, p) * (1 + 1e-15)
