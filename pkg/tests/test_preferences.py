"""Boltzmann preference priors, temperature calibration, risk aggregation."""

import math

import numpy as np
import pytest

from riskgate.freeenergy import (
    boltzmann_prior,
    calibrate_beta,
    cumulative_risk,
    instantaneous_risk,
)


class TestBoltzmannPrior:
    def test_zero_beta_is_uniform(self):
        prior = boltzmann_prior([1.0, 5.0, 9.0], 0.0)
        assert np.allclose(prior.probabilities.probabilities, [1 / 3] * 3, atol=1e-12)

    def test_ratio_law_two_to_one(self):
        beta = 1.7
        prior = boltzmann_prior([0.0, math.log(2) / beta], beta)
        ratio = prior.probabilities[0] / prior.probabilities[1]
        assert ratio == pytest.approx(2.0, abs=1e-10)

    def test_direct_evaluation_oracle(self):
        prior = boltzmann_prior([0.0, 1.0, 2.0], 1.0)
        weights = np.array([1.0, math.exp(-1.0), math.exp(-2.0)])
        assert np.allclose(prior.probabilities.probabilities, weights / weights.sum(),
                           atol=1e-12)
        assert prior.log_partition == pytest.approx(math.log(weights.sum()), abs=1e-12)

    def test_ratio_law_randomized(self):
        rng = np.random.default_rng(20)
        for _ in range(300):
            losses = rng.normal(0, 3, size=int(rng.integers(2, 8)))
            beta = float(rng.uniform(0, 4))
            prior = boltzmann_prior(losses, beta)
            i, j = rng.integers(0, losses.size, 2)
            expected = math.exp(-beta * (losses[i] - losses[j]))
            ratio = prior.probabilities[int(i)] / prior.probabilities[int(j)]
            assert ratio == pytest.approx(expected, rel=1e-10)

    def test_large_beta_does_not_overflow(self):
        prior = boltzmann_prior([-1000.0, 1000.0], 50.0)
        assert prior.probabilities[0] == pytest.approx(1.0, abs=1e-12)
        assert math.isfinite(prior.log_partition)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            boltzmann_prior([1.0, 2.0], -0.5)
        with pytest.raises(ValueError):
            boltzmann_prior([], 1.0)
        with pytest.raises(ValueError):
            boltzmann_prior([math.inf, 0.0], 1.0)


class TestCalibrateBeta:
    def test_equal_desirabilities_give_zero(self):
        assert calibrate_beta(0.5, 0.5, 0.0, 1.0) == 0.0

    def test_ratio_e_over_unit_range(self):
        assert calibrate_beta(0.2, 0.2 * math.e, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_ratio_100_over_range_10(self):
        beta = calibrate_beta(0.01, 1.0, -2.0, 8.0)
        assert beta == pytest.approx(math.log(100) / 10, abs=1e-12)
        assert beta == pytest.approx(0.460517, abs=1e-6)

    def test_round_trip_through_prior(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            lo, hi = sorted(rng.normal(0, 5, 2))
            if hi - lo < 1e-6:
                continue
            p_max = float(rng.uniform(0.01, 0.5))
            p_min = float(rng.uniform(p_max, 1.0))
            beta = calibrate_beta(p_max, p_min, lo, hi)
            assert beta >= 0.0
            prior = boltzmann_prior([lo, hi], beta)
            ratio = prior.probabilities[0] / prior.probabilities[1]
            assert ratio == pytest.approx(p_min / p_max, rel=1e-12)

    def test_beta_round_trips_exactly(self):
        rng = np.random.default_rng(22)
        for _ in range(300):
            beta = float(rng.uniform(0, 5))
            lo, hi = 0.0, float(rng.uniform(0.5, 10))
            prior = boltzmann_prior([lo, hi], beta)
            recovered = calibrate_beta(
                prior.probabilities[1], prior.probabilities[0], lo, hi
            )
            assert recovered == pytest.approx(beta, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            calibrate_beta(0.5, 0.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            calibrate_beta(0.9, 0.1, 0.0, 1.0)
        with pytest.raises(ValueError):
            calibrate_beta(0.0, 0.5, 0.0, 1.0)


class TestInstantaneousRisk:
    def test_dropped_entropy_returns_energy(self):
        assert instantaneous_risk(3.25, 99.0, 1e-9, 0) == 3.25

    def test_positive_sign(self):
        assert instantaneous_risk(1.0, 2.0, 2.0, +1) == pytest.approx(2.0, abs=1e-15)

    def test_negative_sign_mirror(self):
        assert instantaneous_risk(1.0, 2.0, 2.0, -1) == pytest.approx(0.0, abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            instantaneous_risk(1.0, 1.0, 0.0, +1)
        with pytest.raises(ValueError):
            instantaneous_risk(1.0, 1.0, -1.0, -1)
        with pytest.raises(ValueError):
            instantaneous_risk(1.0, 1.0, 1.0, 2)


class TestCumulativeRisk:
    def test_unit_discount_sums(self):
        assert cumulative_risk([0.5] * 8, 1.0) == 4.0

    def test_geometric_closed_form(self):
        gamma, ell, tau = 0.9, 1.7, 12
        expected = ell * (1 - gamma**tau) / (1 - gamma)
        assert cumulative_risk([ell] * tau, gamma) == pytest.approx(expected, rel=1e-12)

    def test_binary_exact_case(self):
        # powers of two make the accumulation exact
        assert cumulative_risk([1.0, 2.0, 3.0], 0.5) == 2.75

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            cumulative_risk([1.0], 0.0)
        with pytest.raises(ValueError):
            cumulative_risk([1.0], 1.5)
        with pytest.raises(ValueError):
            cumulative_risk([], 0.9)
