import math

import numpy as np
import pytest

from sphar.model import ModelError, SpharModel, autocovariances, space_time_covariance
from sphar.simulate import (
    CoefficientPanel,
    SimulationPlan,
    simulate_multipole,
    simulate_panel,
    substream_seed,
    synthesize_field,
    write_panel_csv,
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


class TestSubstreams:
    def test_distinct_indices_distinct_seeds(self):
        seen = set()
        for ell in range(4):
            for m in range(-ell, ell + 1):
                for rep in range(3):
                    seen.add(substream_seed(99, ell, m, rep))
        assert len(seen) == 3 * 16

    def test_same_index_same_seed(self):
        assert substream_seed(5, 3, -2, 7) == substream_seed(5, 3, -2, 7)

    def test_m_range_checked(self):
        with pytest.raises(ValueError):
            substream_seed(0, 2, 3)


class TestSimulateMultipole:
    def test_deterministic(self):
        model = ar1_model([0.5, 0.4], [1.0, 2.0])
        a = simulate_multipole(model, 1, 200, seed=42)
        b = simulate_multipole(model, 1, 200, seed=42)
        np.testing.assert_array_equal(a, b)
        c = simulate_multipole(model, 1, 200, seed=43)
        assert not np.array_equal(a, c)

    def test_matches_naive_recursion(self):
        # independent oracle: literal Python recursion on the same draws
        model = SpharModel(
            order=2,
            degree_max=3,
            phi=np.tile([0.4, 0.3], (4, 1)),
            noise_spectrum=np.full(4, 0.7),
        )
        block, innov = simulate_multipole(model, 3, 60, seed=9, keep_innovations=True)
        for row, eps in zip(block, innov):
            series = list(row[:2])
            for t in range(2, 60):
                series.append(0.4 * series[t - 1] + 0.3 * series[t - 2] + eps[t - 2])
            np.testing.assert_allclose(row, series, atol=1e-10)

    def test_white_noise_lag_one_autocorr(self):
        n = 100_000
        model = ar1_model([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        block = simulate_multipole(model, 2, n, seed=11)
        x, y = block[:, :-1].ravel(), block[:, 1:].ravel()
        corr = np.mean(x * y) / np.mean(block * block)
        assert abs(corr) < 3.0 / math.sqrt(n)

    def test_ar1_marginal_variance(self):
        n = 100_000
        model = ar1_model([0.5, 0.5], [1.0, 1.0])
        block = simulate_multipole(model, 1, n, seed=3)
        sample_var = float(np.mean(block * block))
        c0 = 4.0 / 3.0
        # Var of the pooled variance estimate: 2 c0^2 sum_tau rho^2 / (n_series * n)
        rho_sq_sum = (1 + 0.25) / (1 - 0.25)
        se = c0 * math.sqrt(2.0 * rho_sq_sum / (3 * n))
        assert abs(sample_var - c0) < 3.0 * se

    def test_stationary_start_no_transient(self):
        # strong AR(1): a zero start would depress early-sample variance by far
        # more than the MC error; check lags 0 and 1 over the first 50 steps
        model = ar1_model([0.8] * 21, np.ones(21))
        truth = autocovariances([0.8], 1.0, 1)
        for ell, reps in ((0, 600), (5, 150), (20, 60)):
            acc = np.zeros((reps, 2))
            for b in range(reps):
                block = simulate_multipole(model, ell, 50, seed=17, replication=b)
                acc[b, 0] = np.mean(block * block)
                acc[b, 1] = np.mean(block[:, :-1] * block[:, 1:])
            for lag in (0, 1):
                mean = acc[:, lag].mean()
                se = acc[:, lag].std(ddof=1) / math.sqrt(reps)
                assert abs(mean - truth[lag]) < 3.5 * se, (ell, lag)

    def test_independence_across_m(self):
        n = 100_000
        model = ar1_model([0.0, 0.6], [1.0, 1.0])
        block = simulate_multipole(model, 1, n, seed=5)
        corr = np.corrcoef(block)[0, 2]
        assert abs(corr) < 3.0 / math.sqrt(n)

    def test_gaussian_moments(self):
        n = 100_000
        model = ar1_model([0.5], [1.0])
        sample = simulate_multipole(model, 0, n, seed=7)[0]
        z = (sample - sample.mean()) / sample.std()
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4) - 3.0)
        assert abs(skew) < 4.0 * math.sqrt(6.0 / n)
        assert abs(kurt) < 4.0 * math.sqrt(24.0 / n)

    def test_burn_in_matches_stationary_law(self):
        model = ar1_model([0.7], [1.0])
        reps = 400
        values = np.empty(reps)
        for b in range(reps):
            block = simulate_multipole(model, 0, 120, seed=23, replication=b, init="burn-in")
            values[b] = np.mean(block * block)
        c0 = autocovariances([0.7], 1.0, 0)[0]
        se = values.std(ddof=1) / math.sqrt(reps)
        assert abs(values.mean() - c0) < 3.5 * se

    def test_power_of_two_noise_scaling_is_exact(self):
        base = ar1_model([0.6, 0.3], [1.0, 0.5])
        scaled = ar1_model([0.6, 0.3], [4.0, 2.0])
        a = simulate_multipole(base, 1, 300, seed=31)
        b = simulate_multipole(scaled, 1, 300, seed=31)
        np.testing.assert_array_equal(2.0 * a, b)


class TestPanel:
    def test_thread_count_invariance(self):
        model = ar1_model([0.5, 0.3, 0.2, 0.1], np.ones(4))
        plan = SimulationPlan(model=model, n_steps=400, seed=123)
        serial = simulate_panel(plan, workers=1)
        threaded = simulate_panel(plan, workers=8)
        for ell in range(5):
            if ell <= 3:
                np.testing.assert_array_equal(serial.series(ell), threaded.series(ell))
        assert serial.model_hash == threaded.model_hash

    def test_degree_cut(self):
        model = ar1_model([0.5, 0.3, 0.2], np.ones(3))
        plan = SimulationPlan(model=model, n_steps=50, seed=1, degree_max=1)
        panel = simulate_panel(plan)
        assert panel.degree_max == 1
        assert panel.series(1).shape == (3, 50)

    def test_innovations_roundtrip(self):
        model = SpharModel(
            order=2,
            degree_max=2,
            phi=np.tile([0.3, 0.2], (3, 1)),
            noise_spectrum=np.ones(3),
        )
        plan = SimulationPlan(model=model, n_steps=100, seed=77)
        panel = simulate_panel(plan, keep_innovations=True)
        block = panel.series(2)
        eps = panel.innovations(2)
        reconstructed = block[:, 2:] - 0.3 * block[:, 1:-1] - 0.2 * block[:, :-2]
        np.testing.assert_allclose(reconstructed, eps, atol=1e-10)

    def test_plan_validation(self):
        model = ar1_model([0.5], [1.0])
        with pytest.raises(ValueError):
            SimulationPlan(model=model, n_steps=1, seed=0)
        with pytest.raises(ValueError):
            SimulationPlan(model=model, n_steps=10, seed=0, degree_max=5)
        with pytest.raises(ValueError):
            SimulationPlan(model=model, n_steps=10, seed=0, init="warm")


class TestFieldSynthesis:
    def test_constant_mode(self):
        block = np.array([[2.5, -1.0]])
        panel = CoefficientPanel(
            degree_max=0, n_steps=2, order=1, seed=0, model_hash="x", blocks=(block,)
        )
        values = synthesize_field(panel, 1, [(0.3, 1.0), (2.0, 4.0)])
        np.testing.assert_allclose(values, 2.5 / math.sqrt(FOUR_PI), rtol=1e-14)

    def test_spatial_covariance_against_exact(self):
        model = ar1_model([0.5, 0.4, 0.3, 0.2, 0.1], np.ones(5) * 0.8)
        # two directions with <x, y> = 0.5: same longitude, polar angles 0 and pi/3
        directions = [(0.0, 0.0), (math.pi / 3, 0.0)]
        reps = 800
        samples = np.empty((reps, 2))
        for b in range(reps):
            blocks = tuple(
                simulate_multipole(model, ell, 2, seed=202, replication=b) for ell in range(5)
            )
            panel = CoefficientPanel(
                degree_max=4, n_steps=2, order=1, seed=202, model_hash="x", blocks=blocks
            )
            samples[b] = synthesize_field(panel, 1, directions)
        truth_cov = space_time_covariance(model, 0.5, 0)
        truth_var = space_time_covariance(model, 1.0, 0)
        got_cov = float(np.mean(samples[:, 0] * samples[:, 1]))
        se_cov = math.sqrt((truth_var**2 + truth_cov**2) / reps)
        assert abs(got_cov - truth_cov) < 3.0 * se_cov
        got_var = float(np.mean(samples[:, 0] ** 2))
        se_var = truth_var * math.sqrt(2.0 / reps)
        assert abs(got_var - truth_var) < 3.0 * se_var


class TestPanelExport:
    def test_csv_schema_and_roundtrip(self, tmp_path):
        model = ar1_model([0.5, 0.3], [1.0, 1.0])
        plan = SimulationPlan(model=model, n_steps=4, seed=9)
        panel = simulate_panel(plan)
        path = tmp_path / "panel.csv"
        write_panel_csv(panel, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "ell,m,t,value"
        assert len(lines) == 1 + 4 * (1 + 3)
        ell, m, t, value = lines[1].split(",")
        assert (ell, m, t) == ("0", "0", "1")
        assert float(value) == panel.value(0, 0, 1)
