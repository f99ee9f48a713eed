import math

import numpy as np
import pytest
from scipy.optimize import curve_fit

from conftest import ode_g2, ode_populations, rate_matrix
from spekit import (
    AbsorbingStateError,
    DegenerateEigenvaluesError,
    LevelPopulations,
    PumpModel,
    RateSeries,
    ThreeLevelRates,
    ValidationError,
    extrapolate_zero_power,
    g2_exact,
    g2_params_from_rates,
    nonzero_eigenvalue_magnitudes,
    propagate,
    pump_rate,
    quantum_efficiency,
    steady_state,
    with_excitation,
)

REFERENCE = ThreeLevelRates(0.1, 0.3, 0.01, 0.002)

RANDOM_RATE_SETS = [
    ThreeLevelRates(a, r, s, d)
    for a, r, s, d in [
        (0.05, 0.25, 0.004, 0.001),
        (0.2, 0.5, 0.02, 0.01),
        (0.01, 0.33, 0.001, 0.0005),
        (0.3, 1.0, 0.05, 0.002),
        (0.08, 0.15, 0.0, 0.001),
    ]
]


class TestRateTypes:
    def test_negative_rate_rejected(self):
        with pytest.raises(ValidationError):
            ThreeLevelRates(-0.1, 0.3, 0.0, 0.0)

    def test_zero_radiative_rate_rejected(self):
        with pytest.raises(ValidationError):
            ThreeLevelRates(0.1, 0.0, 0.0, 0.0)

    def test_matrix_columns_sum_to_zero(self):
        m = REFERENCE.matrix()
        assert np.allclose(m.sum(axis=0), 0.0, atol=1e-15)

    def test_populations_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            LevelPopulations(0.5, 0.5, 0.1)


class TestSteadyState:
    def test_no_pumping_all_ground(self):
        pops = steady_state(ThreeLevelRates(0.0, 0.3, 0.01, 0.002))
        assert (pops.p_g, pops.p_e, pops.p_m) == (1.0, 0.0, 0.0)

    def test_symmetric_two_level(self):
        pops = steady_state(ThreeLevelRates(0.2, 0.2, 0.0, 0.0))
        assert pops.p_g == pytest.approx(0.5, abs=1e-15)
        assert pops.p_e == pytest.approx(0.5, abs=1e-15)
        assert pops.p_m == 0.0

    def test_matches_long_time_ode_integration(self):
        # independent oracle: integrate the rate equations to t = 1e5 ns
        pops = steady_state(REFERENCE)
        final = ode_populations(REFERENCE, [1.0, 0.0, 0.0], [1e5])[:, -1]
        assert np.allclose(pops.as_array(), final, atol=1e-9)

    def test_null_vector_property(self):
        for rates in RANDOM_RATE_SETS:
            pops = steady_state(rates)
            residual = rate_matrix(rates) @ pops.as_array()
            assert np.max(np.abs(residual)) < 1e-15
            assert pops.p_g + pops.p_e + pops.p_m == pytest.approx(1.0, abs=1e-12)

    def test_absorbing_metastable_state_rejected(self):
        with pytest.raises(AbsorbingStateError):
            steady_state(ThreeLevelRates(0.1, 0.3, 0.01, 0.0))


class TestPropagate:
    def test_population_conservation(self):
        rng = np.random.default_rng(7)
        for rates in RANDOM_RATE_SETS:
            p0 = rng.dirichlet(np.ones(3))
            pops = LevelPopulations(*p0)
            for tau in (0.0, 0.5, 10.0, 1e4):
                out = propagate(rates, pops, tau)
                assert out.p_g + out.p_e + out.p_m == pytest.approx(1.0, abs=1e-12)

    def test_matches_ode(self):
        out = propagate(REFERENCE, LevelPopulations(1.0, 0.0, 0.0), 50.0)
        expected = ode_populations(REFERENCE, [1.0, 0.0, 0.0], [50.0])[:, -1]
        assert np.allclose(out.as_array(), expected, atol=1e-9)


class TestG2Exact:
    def test_zero_delay_is_zero(self):
        for rates in RANDOM_RATE_SETS:
            assert g2_exact(rates, [0.0])[0] == 0.0

    def test_two_level_closed_form(self):
        rates = ThreeLevelRates(0.12, 0.31, 0.0, 0.004)
        tau = np.linspace(0.0, 50.0, 301)
        expected = 1.0 - np.exp(-(rates.gamma_ge + rates.gamma_eg) * tau)
        assert np.max(np.abs(g2_exact(rates, tau) - expected)) < 1e-10

    def test_reference_rates_match_ode_oracle(self):
        taus = np.array([1.0, 10.0, 100.0, 1000.0])
        assert np.max(np.abs(g2_exact(REFERENCE, taus) - ode_g2(REFERENCE, taus))) < 1e-8

    def test_degenerate_eigenvalues_match_ode_oracle(self):
        rates = ThreeLevelRates(0.1, 0.1, 0.1, 0.1)  # discriminant exactly zero
        taus = np.array([0.5, 2.0, 10.0, 50.0])
        assert np.max(np.abs(g2_exact(rates, taus) - ode_g2(rates, taus))) < 1e-8

    def test_complex_eigenvalues_match_ode_oracle(self):
        rates = ThreeLevelRates(1.0, 1.0, 1.0, 2.0)
        taus = np.array([0.2, 1.0, 3.0, 10.0])
        assert np.max(np.abs(g2_exact(rates, taus) - ode_g2(rates, taus))) < 1e-8

    def test_asymptote(self):
        for rates in RANDOM_RATE_SETS:
            if rates.gamma_em > 0:
                tau2 = 1.0 / nonzero_eigenvalue_magnitudes(rates)[1]
            else:
                tau2 = 1.0 / (rates.gamma_ge + rates.gamma_eg)
            assert abs(g2_exact(rates, [20.0 * tau2])[0] - 1.0) < 1e-6

    def test_zero_pump_rejected(self):
        with pytest.raises(ValidationError):
            g2_exact(ThreeLevelRates(0.0, 0.3, 0.0, 0.0), [1.0])

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValidationError):
            g2_exact(REFERENCE, [1.0, 0.5])


class TestG2Params:
    def test_two_level_limit(self):
        rates = ThreeLevelRates(0.1, 0.3, 0.0, 0.001)
        params = g2_params_from_rates(rates)
        assert params.alpha_bunching == 0.0
        assert 1.0 / params.tau1 == pytest.approx(0.4, rel=1e-12)

    def test_oracle_least_squares_fit_of_exact_curve(self):
        # independent oracle: scipy curve_fit of the two-exponential form
        # against the exact correlation
        params = g2_params_from_rates(REFERENCE)
        tau = np.linspace(0.0, 10.0 / nonzero_eigenvalue_magnitudes(REFERENCE)[1], 4000)
        exact = g2_exact(REFERENCE, tau)

        def eq2(t, t1, t2, al):
            return 1.0 - (1.0 + al) * np.exp(-t / t1) + al * np.exp(-t / t2)

        popt, _ = curve_fit(
            eq2, tau, exact, p0=[params.tau1 * 1.3, params.tau2 * 0.7,
                                 params.alpha_bunching * 1.5],
        )
        assert popt[0] == pytest.approx(params.tau1, rel=1e-6)
        assert popt[1] == pytest.approx(params.tau2, rel=1e-6)
        assert popt[2] == pytest.approx(params.alpha_bunching, rel=1e-6)

    def test_eigenvalue_identity_against_characteristic_roots(self):
        for rates in RANDOM_RATE_SETS:
            a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
            roots = np.roots([1.0, a + r + s + d, d * (a + r + s) + a * s])
            mu = np.sort(np.abs(roots))
            params = g2_params_from_rates(rates)
            assert 1.0 / params.tau1 == pytest.approx(mu[1], rel=1e-10)
            if math.isfinite(params.tau2):
                assert 1.0 / params.tau2 == pytest.approx(mu[0], rel=1e-10)

    def test_closed_form_matches_exact_in_paper_regime(self):
        # gamma_eg >= 50 gamma_em: relative sup-norm deviation < 1e-3
        rng = np.random.default_rng(11)
        for _ in range(10):
            gamma_eg = rng.uniform(0.1, 1.0)
            rates = ThreeLevelRates(
                gamma_ge=rng.uniform(0.01, 0.5) * gamma_eg,
                gamma_eg=gamma_eg,
                gamma_em=gamma_eg / rng.uniform(50.0, 500.0),
                gamma_mg=rng.uniform(1e-4, 5e-3),
            )
            params = g2_params_from_rates(rates)
            tau = np.linspace(0.0, 20.0 * params.tau2, 2000)
            exact = g2_exact(rates, tau)
            dev = np.abs(params.curve(tau) - exact) / np.maximum(np.abs(exact), 1e-3)
            assert np.max(dev) < 1e-3

    def test_paper_zero_power_limits(self, e1_rates):
        # with vanishing pump the eigenvalues approach the excited-state and
        # metastable decay rates
        params = g2_params_from_rates(with_excitation(e1_rates, 1e-12))
        assert params.tau1 == pytest.approx(3.33, rel=1e-6)
        assert params.tau2 == pytest.approx(675.0, rel=1e-6)

    def test_bunching_sign(self):
        tau_probe = np.linspace(0.0, 5000.0, 20001)
        for rates in RANDOM_RATE_SETS:
            params = g2_params_from_rates(rates)
            has_bunching = g2_exact(rates, tau_probe).max() > 1.0
            assert has_bunching == (params.alpha_bunching > 0)

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateEigenvaluesError):
            g2_params_from_rates(ThreeLevelRates(0.1, 0.1, 0.1, 0.1))

    def test_complex_rejected(self):
        with pytest.raises(DegenerateEigenvaluesError):
            g2_params_from_rates(ThreeLevelRates(1.0, 1.0, 1.0, 2.0))

    def test_non_shelving_regime_rejected(self):
        # deshelving faster than every other rate: alpha would be negative
        with pytest.raises(ValidationError):
            g2_params_from_rates(ThreeLevelRates(0.1, 0.1, 0.1, 1.0))


class TestPump:
    def test_zero_power(self):
        assert pump_rate(0.0, PumpModel(0.2)) == 0.0

    def test_arithmetic(self):
        assert pump_rate(0.5, PumpModel(0.2)) == pytest.approx(0.1, abs=1e-15)

    def test_negative_power_rejected(self):
        with pytest.raises(ValidationError):
            pump_rate(-1.0, PumpModel(0.2))

    def test_inverse_tau1_linear_in_power(self, e1_rates):
        # 1/tau1 from the closed form is linear in power to high accuracy in
        # the weak-pumping regime: check via straight-line fit residuals
        pump = PumpModel(0.1)
        powers = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        inv_tau1 = np.array([
            1.0 / g2_params_from_rates(
                with_excitation(e1_rates, pump_rate(p, pump))
            ).tau1
            for p in powers
        ])
        coeffs = np.polyfit(powers, inv_tau1, 1)
        resid = inv_tau1 - np.polyval(coeffs, powers)
        assert np.max(np.abs(resid)) / np.mean(inv_tau1) < 1e-3


class TestExtrapolation:
    def test_exact_line_recovery(self):
        powers = np.array([0.1, 0.25, 0.4, 0.7, 1.0])
        series = RateSeries(tuple((p, 0.3 + 0.11 * p, 0.01) for p in powers))
        fit = extrapolate_zero_power(series)
        assert fit.intercept == pytest.approx(0.3, abs=1e-14)
        assert fit.slope == pytest.approx(0.11, abs=1e-14)

    def test_weighting_changes_solution(self):
        pts = ((0.1, 1.0, 0.001), (0.2, 2.0, 1.0), (0.3, 2.0, 1.0))
        weighted = extrapolate_zero_power(RateSeries(pts))
        unweighted = extrapolate_zero_power(
            RateSeries(tuple((p, v, 1.0) for p, v, _ in pts))
        )
        assert weighted.intercept != pytest.approx(unweighted.intercept, rel=1e-3)

    def test_closed_loop_intercept_from_params(self, e1_rates):
        # synthetic series built from the closed-form parameters: the
        # intercept recovers the total excited-state decay rate within 5%
        pump = PumpModel(0.1)
        points = []
        for p in np.linspace(0.1, 1.0, 10):
            params = g2_params_from_rates(
                with_excitation(e1_rates, pump_rate(p, pump))
            )
            points.append((p, 1.0 / params.tau1, 0.001))
        fit = extrapolate_zero_power(RateSeries(tuple(points)))
        total_decay = e1_rates.gamma_eg + e1_rates.gamma_em
        assert abs(fit.intercept - total_decay) / total_decay < 0.05
        # paper target: excited-state lifetime of 3.33 ns
        assert 1.0 / fit.intercept == pytest.approx(3.33, rel=0.05)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValidationError):
            RateSeries(((0.1, 1.0, 0.1),))

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValidationError):
            extrapolate_zero_power(
                RateSeries(((0.1, 1.0, -0.1), (0.2, 2.0, 0.1)))
            )


class TestQuantumEfficiency:
    def test_no_shelving_is_unity(self):
        assert quantum_efficiency(ThreeLevelRates(0.1, 0.3, 0.0, 0.0)) == 1.0

    def test_flux_balance_oracle(self):
        # oracle: radiative flux fraction at steady state from the
        # populations themselves (deshelving flux returns population to |g>)
        rates = ThreeLevelRates(0.05, 0.3, 0.01, 5.0)
        pops = steady_state(rates)
        radiative = rates.gamma_eg * pops.p_e
        total_return = radiative + rates.gamma_mg * pops.p_m
        assert quantum_efficiency(rates) == pytest.approx(
            radiative / total_return, rel=1e-12
        )
        assert quantum_efficiency(rates) == pytest.approx(0.968, abs=5e-4)

    def test_paper_regime_above_ninety_percent(self, e1_rates):
        assert quantum_efficiency(e1_rates) > 0.9

    def test_pump_independent(self):
        low = quantum_efficiency(ThreeLevelRates(0.001, 0.3, 0.01, 0.002))
        high = quantum_efficiency(ThreeLevelRates(0.5, 0.3, 0.01, 0.002))
        assert low == high
