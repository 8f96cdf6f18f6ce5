import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphar.harmonics import legendre_all
from sphar.model import (
    power_law_model,
    ModelError,
    ParametricFamily,
    SpharModel,
    autocovariances,
    build_parametric,
    check_stationarity,
    correlation_spectral_density,
    kernel_eval,
    kernel_tail_bound,
    second_order,
    space_time_covariance,
)

FOUR_PI = 4.0 * math.pi


def ar1_model(phi_values, noise, margin=0.05):
    phi_values = np.asarray(phi_values, dtype=float)
    return SpharModel(
        order=1,
        degree_max=phi_values.size - 1,
        phi=phi_values[:, None],
        noise_spectrum=np.asarray(noise, dtype=float),
        margin=margin,
    )


class TestStationarity:
    def test_ar1_inside(self):
        ok, modulus = check_stationarity([0.5], 0.1)
        assert ok
        assert modulus == pytest.approx(2.0, rel=1e-12)

    def test_ar1_outside(self):
        ok, modulus = check_stationarity([0.95], 0.1)
        assert not ok
        assert modulus == pytest.approx(1.0 / 0.95, rel=1e-12)

    def test_ar2_example(self):
        # oracle: quadratic formula on 1 - 0.5 z - 0.3 z^2 = 0
        roots = np.roots([-0.3, -0.5, 1.0])
        expected = np.min(np.abs(roots))
        ok, modulus = check_stationarity([0.5, 0.3], 0.1)
        assert ok
        assert modulus == pytest.approx(expected, rel=1e-12)
        assert modulus == pytest.approx(1.17360, abs=5e-6)

    def test_all_zero_vacuous(self):
        ok, modulus = check_stationarity([0.0, 0.0], 0.5)
        assert ok
        assert modulus == math.inf

    @given(
        st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=4),
        st.floats(0.01, 0.3),
    )
    @settings(max_examples=50, deadline=None)
    def test_sufficient_condition(self, raw, margin):
        # sum_j |phi_j| (1+margin)^j < 1 guarantees a root-free enlarged disk
        phi = np.asarray(raw)
        scale = np.sum(np.abs(phi) * (1.0 + margin) ** np.arange(1, phi.size + 1))
        if scale >= 0.99:
            phi = phi * 0.98 / scale
        ok, _ = check_stationarity(phi, margin)
        assert ok


class TestAutocovariances:
    def test_ar1_closed_form(self):
        got = autocovariances([0.5], 1.0, 2)
        np.testing.assert_allclose(got, [4.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    def test_white_noise(self):
        got = autocovariances([0.0], 2.0, 3)
        np.testing.assert_allclose(got, [2.0, 0.0, 0.0, 0.0], atol=0)

    def test_ar2_hand_solve(self):
        # by hand: rho1 = phi1/(1-phi2), rho2 = phi1*rho1 + phi2
        got = autocovariances([0.5, 0.2], 1.0, 2)
        rho1 = 0.5 / 0.8
        rho2 = 0.5 * rho1 + 0.2
        c0 = 1.0 / (1.0 - 0.5 * rho1 - 0.2 * rho2)
        assert rho1 == 0.625 and rho2 == 0.5125
        assert got[0] == pytest.approx(c0, rel=1e-14)
        assert got[0] == pytest.approx(1.709402, abs=1e-6)
        np.testing.assert_allclose(got[1:], c0 * np.array([rho1, rho2]), rtol=1e-14)

    def test_recursion_extension(self):
        phi = [0.4, 0.25, -0.1]
        got = autocovariances(phi, 1.3, 10)
        for tau in range(3, 11):
            expected = np.dot(phi, got[tau - 3 : tau][::-1][: len(phi)])
            assert got[tau] == pytest.approx(expected, rel=1e-12)

    @given(st.floats(-0.9, 0.9), st.floats(0.1, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_ar1_formula(self, phi, c_z):
        got = autocovariances([phi], c_z, 4)
        expected = c_z / (1 - phi * phi) * phi ** np.arange(5)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)


class TestSpectralDensity:
    def test_flat(self):
        for lam in (-2.0, 0.0, 1.5):
            assert correlation_spectral_density([0.0], lam) == pytest.approx(
                1.0 / (2 * math.pi), rel=1e-14
            )

    def test_ar1_at_zero(self):
        got = correlation_spectral_density([0.5], 0.0)
        assert got == pytest.approx(0.75 / (2 * math.pi * 0.25), rel=1e-12)
        assert got == pytest.approx(0.477465, abs=1e-6)

    def test_integrates_to_one(self):
        lam = np.linspace(-math.pi, math.pi, 20001)
        for phi in ([0.6], [0.5, 0.2], [0.3, -0.2, 0.25]):
            g = correlation_spectral_density(phi, lam)
            integral = np.trapezoid(g, lam)
            assert abs(integral - 1.0) < 1e-6


class TestSecondOrder:
    def test_scalar_case(self):
        model = ar1_model([0.6], [1.0])
        so = second_order(model, 0)
        assert so.sigma.shape == (1, 1)
        assert so.sigma[0, 0] == 1.0
        assert so.noise_ratio == pytest.approx(1 - 0.36, rel=1e-12)

    def test_ar2_sigma(self):
        model = SpharModel(
            order=2,
            degree_max=0,
            phi=np.array([[0.5, 0.2]]),
            noise_spectrum=np.array([1.0]),
        )
        so = second_order(model, 0)
        np.testing.assert_allclose(so.sigma, [[1.0, 0.625], [0.625, 1.0]], rtol=1e-13)

    def test_white_noise_identity(self):
        model = SpharModel(
            order=2,
            degree_max=2,
            phi=np.zeros((3, 2)),
            noise_spectrum=np.array([1.5, 2.0, 0.7]),
        )
        so = second_order(model, 1)
        np.testing.assert_allclose(so.gamma, 2.0 * np.eye(2), atol=0)
        assert so.noise_ratio == 1.0

    def test_gamma_positive_definite_random_models(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = int(rng.integers(1, 4))
            phi = rng.uniform(-1, 1, size=p)
            weight = np.sum(np.abs(phi) * 1.05 ** np.arange(1, p + 1))
            phi *= rng.uniform(0.2, 0.95) / max(weight, 1e-9)
            model = SpharModel(
                order=p,
                degree_max=0,
                phi=phi[None, :],
                noise_spectrum=np.array([float(rng.uniform(0.5, 2.0))]),
            )
            gamma = second_order(model, 0).gamma
            np.linalg.cholesky(gamma)  # raises if not PD

    def test_noise_ratio_bounded(self):
        # 0 < C_Z/C <= 1 + sum_j |phi_j| for stationary rows
        rng = np.random.default_rng(17)
        for _ in range(20):
            p = int(rng.integers(1, 4))
            phi = rng.uniform(-1, 1, size=p)
            weight = np.sum(np.abs(phi) * 1.05 ** np.arange(1, p + 1))
            phi *= rng.uniform(0.2, 0.95) / max(weight, 1e-9)
            model = SpharModel(
                order=p,
                degree_max=0,
                phi=phi[None, :],
                noise_spectrum=np.array([float(rng.uniform(0.5, 2.0))]),
            )
            ratio = second_order(model, 0).noise_ratio
            assert 0.0 < ratio <= 1.0 + np.sum(np.abs(phi)) + 1e-12

    def test_eigenvalue_sandwich(self):
        lam_grid = np.linspace(-math.pi, math.pi, 2048)
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = int(rng.integers(1, 4))
            phi = rng.uniform(-1, 1, size=p)
            weight = np.sum(np.abs(phi) * 1.05 ** np.arange(1, p + 1))
            phi *= rng.uniform(0.2, 0.9) / max(weight, 1e-9)
            model = SpharModel(
                order=p,
                degree_max=0,
                phi=phi[None, :],
                noise_spectrum=np.array([1.0]),
            )
            sigma = second_order(model, 0).sigma
            eigs = np.linalg.eigvalsh(sigma)
            g = correlation_spectral_density(phi, lam_grid)
            lo, hi = 2 * math.pi * g.min(), 2 * math.pi * g.max()
            assert eigs.min() >= lo - 1e-6
            assert eigs.max() <= hi + 1e-6

    def test_sigma_inverse_rate(self):
        # ||(C_Z/C) Sigma^-1 - I||_inf * ell^beta stays bounded with a
        # non-increasing block envelope; l_star=1 makes |phi_ell| = G ell^-beta
        # exactly for ell >= 1, the hypothesis the rate is stated under
        family = ParametricFamily(
            G=0.7, l_star=1, alpha_phi=2.5, G_Z=1.0, alpha_Z=2.2, order=2, lag_weights=(0.6, 0.4)
        )
        model = build_parametric(family, 500)
        beta = family.alpha_phi
        rates = []
        for ell in range(1, 501):
            so = second_order(model, ell)
            deviation = so.noise_ratio * np.linalg.inv(so.sigma) - np.eye(2)
            rates.append(np.max(np.abs(deviation)) * ell**beta)
        rates = np.asarray(rates)
        assert np.all(np.isfinite(rates))
        blocks = [rates[0:9].max(), rates[9:99].max(), rates[99:].max()]
        assert blocks[0] >= blocks[1] >= blocks[2]


class TestKernelEval:
    def test_constant_mode(self):
        model = ar1_model([0.25, 0.0, 0.0], [1.0, 1.0, 1.0])
        values = kernel_eval(model, np.array([-1.0, 0.2, 0.9]))
        np.testing.assert_allclose(values[:, 0], 0.25 / FOUR_PI, rtol=1e-14)

    def test_dipole_mode(self):
        model = ar1_model([0.0, 0.5, 0.0], [1.0, 1.0, 1.0])
        for z in (-0.7, 0.0, 0.3):
            assert kernel_eval(model, z)[0] == pytest.approx(0.5 * 3 * z / FOUR_PI, rel=1e-13)

    def test_matches_termwise_oracle(self):
        ells = np.arange(51)
        phi = np.zeros(51)
        phi[1:] = 0.8 * ells[1:] ** -3.0
        model = ar1_model(phi, np.ones(51))
        z = 0.3
        legendre = legendre_all(z, 50).values
        oracle = float(np.sum(phi * (2 * ells + 1) / FOUR_PI * legendre))
        assert kernel_eval(model, z)[0] == pytest.approx(oracle, abs=1e-14)

    def test_truncation(self):
        phi = np.array([0.1, 0.2, 0.3])
        model = ar1_model(phi, np.ones(3))
        got = kernel_eval(model, 0.4, truncation=1)[0]
        expected = 0.1 / FOUR_PI + 0.2 * 3 * 0.4 / FOUR_PI
        assert got == pytest.approx(expected, rel=1e-13)


class TestSpaceTimeCovariance:
    def test_field_variance_at_one(self):
        model = ar1_model([0.5, 0.3, 0.1], [1.0, 0.5, 0.25])
        spectrum = model.spectrum()
        expected = float(np.sum(spectrum * (2 * np.arange(3) + 1) / FOUR_PI))
        assert space_time_covariance(model, 1.0, 0) == pytest.approx(expected, rel=1e-13)

    def test_white_noise_lag_one(self):
        model = ar1_model([0.0, 0.0], [1.0, 2.0])
        for z in (-0.5, 0.0, 0.8):
            assert space_time_covariance(model, z, 1) == 0.0

    def test_ar1_lag_two_closed_form(self):
        phi = np.array([0.5, 0.3, 0.2])
        noise = np.array([1.0, 0.7, 0.4])
        model = ar1_model(phi, noise)
        z = 0.5
        legendre = legendre_all(z, 2).values
        oracle = float(
            np.sum(phi**2 * noise / (1 - phi**2) * (2 * np.arange(3) + 1) / FOUR_PI * legendre)
        )
        assert space_time_covariance(model, z, 2) == pytest.approx(oracle, rel=1e-13)


class TestModelValidation:
    def test_rejects_nonpositive_noise(self):
        with pytest.raises(ModelError, match="positive"):
            ar1_model([0.5], [0.0])

    def test_rejects_nonstationary_row_with_diagnostics(self):
        with pytest.raises(ModelError, match="multipole 1") as err:
            ar1_model([0.2, 0.97], [1.0, 1.0], margin=0.1)
        assert "root modulus" in str(err.value)

    def test_rejects_misdeclared_order(self):
        with pytest.raises(ModelError, match="lag-2"):
            SpharModel(
                order=2,
                degree_max=1,
                phi=np.array([[0.5, 0.0], [0.2, 0.0]]),
                noise_spectrum=np.array([1.0, 1.0]),
            )

    def test_accepts_white_noise_table(self):
        model = ar1_model([0.0, 0.0], [1.0, 1.0])
        assert np.all(model.noise_ratio() == 1.0)

    def test_hash_changes_with_content(self):
        a = ar1_model([0.5], [1.0])
        b = ar1_model([0.5], [1.0])
        c = ar1_model([0.4], [1.0])
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != c.content_hash()


class TestParametricFamily:
    def test_phi_magnitude(self):
        family = ParametricFamily(G=0.7, l_star=0, alpha_phi=3.0)
        model = build_parametric(family, 10)
        assert model.phi[5, 0] == pytest.approx(0.7 * 6.0**-3, rel=1e-14)
        assert model.phi[5, 0] == pytest.approx(0.0032407, abs=1e-7)

    def test_noise_spectrum(self):
        # ell^-2 noise decay sits on the boundary of the validated family
        # range, so the formula check goes through the table builder
        model = power_law_model(gamma=0.5, beta=3.0, degree_max=12, noise_gamma=1.0, noise_beta=2.0)
        assert model.noise_spectrum[10] == pytest.approx(1.0 / 121.0, rel=1e-14)
        assert model.noise_spectrum[0] == 1.0
        family = ParametricFamily(G=0.5, G_Z=1.0, alpha_Z=2.5)
        assert build_parametric(family, 4).noise_spectrum[1] == pytest.approx(2.0**-2.5)

    @given(
        st.floats(0.05, 0.9),
        st.integers(0, 20),
        st.floats(2.05, 5.0),
        st.floats(2.05, 4.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_family_always_stationary(self, G, l_star, alpha_phi, alpha_Z):
        family = ParametricFamily(G=G, l_star=l_star, alpha_phi=alpha_phi, alpha_Z=alpha_Z)
        model = build_parametric(family, 40)
        for ell in (0, l_star if l_star <= 40 else 0, 40):
            ok, _ = check_stationarity(model.phi[ell], model.margin)
            assert ok

    def test_range_violations_reported(self):
        with pytest.raises(ModelError, match="alpha_phi"):
            ParametricFamily(G=0.5, alpha_phi=1.5)
        with pytest.raises(ModelError, match="G must"):
            ParametricFamily(G=1.2)

    def test_tail_bound_matches_brute_force(self):
        family = ParametricFamily(G=0.7, l_star=2, alpha_phi=3.0)
        bound = kernel_tail_bound(family, 100)
        ells = np.arange(101, 20_000_001, dtype=float)
        brute = float(
            np.sum(0.7 * (np.abs(ells - 2) + 1) ** -3.0 * (2 * ells + 1)) / FOUR_PI
        )
        assert bound == pytest.approx(brute, rel=1e-4)
