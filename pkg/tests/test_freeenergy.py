"""Divergence, entropy and variational free energy on finite supports."""

import math

import numpy as np
import pytest

from riskgate.freeenergy import (
    AbsoluteContinuityError,
    DiscreteDistribution,
    ImpossibleObservationError,
    JointModel,
    SupportMismatchError,
    entropy,
    kl_divergence,
    vfe,
)


def random_distribution(rng, n):
    p = rng.random(n) + 1e-3
    return DiscreteDistribution(p / p.sum())


def random_joint(rng, n_states, n_obs):
    j = rng.random((n_states, n_obs)) + 1e-3
    return JointModel(j / j.sum())


def kl_oracle(q, p):
    # direct summation, term by term
    total = 0.0
    for qi, pi in zip(q, p):
        if qi > 0:
            total += qi * math.log(qi / pi)
    return total


class TestDiscreteDistribution:
    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            DiscreteDistribution([0.5, -0.1, 0.6])

    def test_rejects_bad_normalization(self):
        with pytest.raises(ValueError):
            DiscreteDistribution([0.5, 0.4])

    def test_accepts_tolerance_slack(self):
        DiscreteDistribution([0.5, 0.5 + 5e-13])

    def test_is_read_only(self):
        d = DiscreteDistribution([0.3, 0.7])
        with pytest.raises(ValueError):
            d.probabilities[0] = 1.0


class TestJointModel:
    def test_marginals(self):
        m = JointModel([[0.2, 0.1], [0.3, 0.4]])
        assert np.allclose(m.state_marginal, [0.3, 0.7])
        assert np.allclose(m.observation_marginal, [0.5, 0.5])

    def test_posterior_renormalizes(self):
        m = JointModel([[0.2, 0.1], [0.3, 0.4]])
        post = m.posterior_given_observation(1)
        assert np.allclose(post.probabilities, [0.2, 0.8])

    def test_zero_marginal_observation_rejected(self):
        m = JointModel([[0.5, 0.0], [0.5, 0.0]])
        with pytest.raises(ImpossibleObservationError):
            m.posterior_given_observation(1)

    def test_total_mass_validated(self):
        with pytest.raises(ValueError):
            JointModel([[0.5, 0.5], [0.5, 0.5]])


class TestKLDivergence:
    def test_identical_distributions_zero(self):
        q = DiscreteDistribution([0.3, 0.7])
        assert kl_divergence(q, q) == 0.0

    def test_single_term(self):
        q = DiscreteDistribution([1.0, 0.0])
        p = DiscreteDistribution([0.5, 0.5])
        assert kl_divergence(q, p) == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            q = random_distribution(rng, 5)
            p = random_distribution(rng, 5)
            expected = kl_oracle(q.probabilities, p.probabilities)
            assert kl_divergence(q, p) == pytest.approx(expected, abs=1e-12)

    def test_non_negative_and_zero_iff_equal(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            q = random_distribution(rng, 4)
            p = random_distribution(rng, 4)
            d = kl_divergence(q, p)
            assert d >= 0.0
            if not np.array_equal(q.probabilities, p.probabilities):
                assert d > 0.0
            assert kl_divergence(q, q) == 0.0

    def test_support_mismatch(self):
        with pytest.raises(SupportMismatchError):
            kl_divergence(DiscreteDistribution([1.0]), DiscreteDistribution([0.5, 0.5]))

    def test_absolute_continuity(self):
        q = DiscreteDistribution([0.5, 0.5])
        p = DiscreteDistribution([1.0, 0.0])
        with pytest.raises(AbsoluteContinuityError):
            kl_divergence(q, p)


class TestEntropy:
    def test_delta_is_zero(self):
        assert entropy(DiscreteDistribution([1.0, 0.0, 0.0])) == 0.0

    def test_uniform_is_log_n(self):
        assert entropy(DiscreteDistribution.uniform(4)) == pytest.approx(math.log(4), abs=1e-12)

    def test_direct_summation_oracle(self):
        d = DiscreteDistribution([0.5, 0.25, 0.25])
        expected = -(0.5 * math.log(0.5) + 2 * 0.25 * math.log(0.25))
        assert entropy(d) == pytest.approx(expected, abs=1e-12)
        assert entropy(d) == pytest.approx(1.5 * math.log(2), abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            h = entropy(random_distribution(rng, n))
            assert 0.0 <= h <= math.log(n) + 1e-12


class TestVFE:
    def test_tight_at_posterior(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            m = random_joint(rng, 3, 3)
            o = int(rng.integers(0, 3))
            q = m.posterior_given_observation(o)
            log_evidence = math.log(m.observation_marginal[o])
            assert vfe(q, m, o) == pytest.approx(-log_evidence, abs=1e-10)

    def test_identity_check_oracle(self):
        # both sides of ln p(o) = -F(q) + KL(q || p(x|o)), computed directly
        m = JointModel([[0.2, 0.1], [0.3, 0.4]])
        q = DiscreteDistribution.uniform(2)
        o = 0
        column = m.joint[:, o]
        f_direct = -sum(
            qi * math.log(ji) for qi, ji in zip(q.probabilities, column)
        ) - entropy(q)
        assert vfe(q, m, o) == pytest.approx(f_direct, abs=1e-12)
        posterior = column / column.sum()
        kl_direct = kl_oracle(q.probabilities, posterior)
        assert math.log(column.sum()) == pytest.approx(-vfe(q, m, o) + kl_direct, abs=1e-10)

    def test_evidence_lower_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            m = random_joint(rng, 4, 3)
            o = int(rng.integers(0, 3))
            q = random_distribution(rng, 4)
            assert vfe(q, m, o) >= -math.log(m.observation_marginal[o]) - 1e-10

    def test_evidence_identity_randomized(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            n_x = int(rng.integers(2, 7))
            n_o = int(rng.integers(2, 7))
            m = random_joint(rng, n_x, n_o)
            o = int(rng.integers(0, n_o))
            q = random_distribution(rng, n_x)
            lhs = math.log(m.observation_marginal[o])
            rhs = -vfe(q, m, o) + kl_divergence(q, m.posterior_given_observation(o))
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_minimized_at_posterior_under_perturbation(self):
        rng = np.random.default_rng(7)
        m = random_joint(rng, 4, 2)
        o = 1
        posterior = m.posterior_given_observation(o)
        base = vfe(posterior, m, o)
        for _ in range(200):
            bump = rng.normal(0, 0.05, 4)
            perturbed = np.clip(posterior.probabilities + bump, 1e-9, None)
            q = DiscreteDistribution(perturbed / perturbed.sum())
            assert vfe(q, m, o) >= base - 1e-12

    def test_impossible_observation(self):
        m = JointModel([[0.5, 0.0], [0.5, 0.0]])
        with pytest.raises(ImpossibleObservationError):
            vfe(DiscreteDistribution.uniform(2), m, 1)

    def test_belief_on_impossible_state(self):
        m = JointModel([[0.5, 0.25], [0.0, 0.25]])
        q = DiscreteDistribution([0.5, 0.5])
        with pytest.raises(AbsoluteContinuityError):
            vfe(q, m, 0)
