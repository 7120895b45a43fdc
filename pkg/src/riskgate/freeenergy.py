"""Exact free-energy numerics on finite discrete distributions.

Everything in this module is closed-form over finite supports: divergences,
entropies, variational free energy for an observed outcome, and the two
policy-scoring functionals (expected free energy and free energy of the
future) in both their state-space and observation-space decompositions.
Boltzmann preference priors over scalar losses, temperature calibration, and
the instantaneous/cumulative risk aggregators used by the gatekeeper stack
live here too.

All values are immutable after construction and every operation is a pure
function, so the module is safe to use from any number of workers without
synchronization.

Conventions: natural logarithms throughout (results in nats), and the
measure-theoretic convention 0*ln(0) = 0. Positive probability mass placed
where a reference distribution has none is reported with an explicit
:class:`AbsoluteContinuityError` rather than a silent NaN or inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# Tolerance for normalization checks on probability objects.
NORMALIZATION_TOL = 1e-12
# Tolerance used when validating reconstructed Boltzmann weights.
PREFERENCE_TOL = 1e-10


class SupportMismatchError(ValueError):
    """Operands are defined over supports of different sizes."""


class AbsoluteContinuityError(ValueError):
    """Positive mass where the reference has none: the divergence is infinite."""


class ImpossibleObservationError(ValueError):
    """Conditioning on an observation whose marginal probability is zero."""


def _as_probability_vector(values: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array of probabilities")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} entries must be finite and non-negative")
    total = float(arr.sum())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"{name} must sum to 1 within {NORMALIZATION_TOL}, got {total!r}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over a finite, ordered outcome set."""

    probabilities: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "probabilities", _as_probability_vector(self.probabilities, "probabilities")
        )

    @property
    def support_size(self) -> int:
        return int(self.probabilities.size)

    def __len__(self) -> int:
        return self.support_size

    def __getitem__(self, i: int) -> float:
        return float(self.probabilities[i])

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def delta(cls, n: int, index: int) -> "DiscreteDistribution":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)


@dataclass(frozen=True)
class JointModel:
    """Joint probability table over (state, observation) pairs.

    The table is indexed ``joint[x, o]``. Marginals and conditionals are
    derived on demand; conditionals are only defined where the conditioning
    marginal is positive.
    """

    joint: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.joint, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("joint must be a non-empty 2-d array")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("joint entries must be finite and non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"joint must sum to 1 within {NORMALIZATION_TOL}, got {total!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "joint", arr)

    @property
    def n_states(self) -> int:
        return self.joint.shape[0]

    @property
    def n_observations(self) -> int:
        return self.joint.shape[1]

    @property
    def state_marginal(self) -> np.ndarray:
        """p(x), summing out observations."""
        return self.joint.sum(axis=1)

    @property
    def observation_marginal(self) -> np.ndarray:
        """p(o), summing out states."""
        return self.joint.sum(axis=0)

    def posterior_given_observation(self, observation: int) -> DiscreteDistribution:
        """p(x | o) for one observation column; the marginal must be positive."""
        column = self.joint[:, observation]
        p_o = float(column.sum())
        if p_o <= 0.0:
            raise ImpossibleObservationError(
                f"observation {observation} has zero marginal probability"
            )
        return DiscreteDistribution(column / p_o)

    def likelihood_given_state(self, state: int) -> DiscreteDistribution:
        """p(o | x) for one state row; the marginal must be positive."""
        row = self.joint[state, :]
        p_x = float(row.sum())
        if p_x <= 0.0:
            raise ValueError(f"state {state} has zero marginal probability")
        return DiscreteDistribution(row / p_x)

    @classmethod
    def from_observation_factorization(
        cls, observation_prior: DiscreteDistribution, states_given_observation: np.ndarray
    ) -> "JointModel":
        """Build joint[x, o] = prior(o) * channel(x | o).

        ``states_given_observation`` has shape (n_states, n_observations) with
        each column a distribution over states.
        """
        channel = _validated_channel(states_given_observation.T, "states_given_observation",
                                     observation_prior.support_size).T
        return cls(channel * observation_prior.probabilities[None, :])

    @classmethod
    def from_state_factorization(
        cls, state_prior: DiscreteDistribution, observations_given_state: np.ndarray
    ) -> "JointModel":
        """Build joint[x, o] = prior(x) * channel(o | x).

        ``observations_given_state`` has shape (n_states, n_observations) with
        each row a distribution over observations.
        """
        channel = _validated_channel(observations_given_state, "observations_given_state",
                                     state_prior.support_size)
        return cls(state_prior.probabilities[:, None] * channel)


def _validated_channel(matrix: np.ndarray, name: str, n_rows: int) -> np.ndarray:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != n_rows:
        raise SupportMismatchError(f"{name} must have {n_rows} rows, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} entries must be finite and non-negative")
    row_sums = arr.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > NORMALIZATION_TOL):
        raise ValueError(f"{name} rows must each sum to 1 within {NORMALIZATION_TOL}")
    return arr


class FreeEnergyKind(str, Enum):
    EFE = "EFE"
    FEF = "FEF"


@dataclass(frozen=True)
class FreeEnergyBreakdown:
    """A policy-scoring free energy with its extrinsic/epistemic split.

    ``extrinsic`` is the expected log-preference ("extrinsic value") and
    ``epistemic`` the expected information gain, both stored as the value
    quantities of the decompositions: EFE recombines as
    ``-extrinsic - epistemic`` and FEF as ``-extrinsic + epistemic``. The
    recombination matches ``total`` exactly when the preference joint is
    built by the matching factorization (see :func:`efe` / :func:`fef`);
    for arbitrary preference joints it is an approximation, which
    :meth:`decomposition_gap` exposes.
    """

    total: float
    extrinsic: float
    epistemic: float
    kind: FreeEnergyKind

    def decomposition_gap(self) -> float:
        sign = -1.0 if self.kind is FreeEnergyKind.EFE else 1.0
        return self.total - (-self.extrinsic + sign * self.epistemic)


def kl_divergence(q: DiscreteDistribution, p: DiscreteDistribution) -> float:
    """KL(q || p) in nats over a shared finite support.

    Zero q-mass terms contribute nothing. q-mass on outcomes where p has
    none makes the divergence infinite, reported as
    :class:`AbsoluteContinuityError`.
    """
    if q.support_size != p.support_size:
        raise SupportMismatchError(
            f"support sizes differ: {q.support_size} vs {p.support_size}"
        )
    qa, pa = q.probabilities, p.probabilities
    mask = qa > 0
    if np.any(pa[mask] == 0):
        raise AbsoluteContinuityError("q has mass where p has none (infinite divergence)")
    qm = qa[mask]
    return float(np.sum(qm * (np.log(qm) - np.log(pa[mask]))))


def entropy(q: DiscreteDistribution) -> float:
    """Shannon entropy H[q] in nats; 0 for a delta, ln(n) for uniform."""
    qa = q.probabilities[q.probabilities > 0]
    return float(-np.sum(qa * np.log(qa)))


def vfe(q: DiscreteDistribution, model: JointModel, observed_o: int) -> float:
    """Variational free energy of belief ``q`` for one observed outcome.

    Returns ``-E_q[ln joint(x, observed_o)] - H[q]``, the negative evidence
    lower bound: ``ln p(o) = -vfe + KL(q || posterior)`` and the bound is
    tight exactly at the posterior.
    """
    if q.support_size != model.n_states:
        raise SupportMismatchError(
            f"belief support {q.support_size} does not match {model.n_states} states"
        )
    if not 0 <= observed_o < model.n_observations:
        raise SupportMismatchError(f"observation index {observed_o} out of range")
    column = model.joint[:, observed_o]
    if float(column.sum()) <= 0.0:
        raise ImpossibleObservationError(
            f"observation {observed_o} has zero marginal probability"
        )
    qa = q.probabilities
    mask = qa > 0
    if np.any(column[mask] == 0):
        raise AbsoluteContinuityError(
            "belief has mass on states impossible under the observed outcome"
        )
    energy = float(-np.sum(qa[mask] * np.log(column[mask])))
    return energy - entropy(q)


def _mutual_information(joint: np.ndarray) -> float:
    # I(X;O) of the predictive joint. Equals both epistemic forms:
    # E_{q(o)} KL[q(x|o) || q(x)] and E_{q(x)} KL[q(o|x) || q(o)].
    px = joint.sum(axis=1)
    po = joint.sum(axis=0)
    xs, os_ = np.nonzero(joint)
    j = joint[xs, os_]
    return float(np.sum(j * (np.log(j) - np.log(px[xs]) - np.log(po[os_]))))


def _require_preference_support(predictive: JointModel, preference: JointModel) -> None:
    if predictive.joint.shape != preference.joint.shape:
        raise SupportMismatchError(
            f"axes differ: {predictive.joint.shape} vs {preference.joint.shape}"
        )
    if np.any((predictive.joint > 0) & (preference.joint == 0)):
        raise AbsoluteContinuityError(
            "predictive mass on pairs with zero preference (infinite free energy)"
        )


def efe(predictive: JointModel, preference: JointModel) -> FreeEnergyBreakdown:
    """Expected free energy of a predictive joint against a preference joint.

    total     = E_pred[ln q(x) - ln pref(o, x)]
    extrinsic = E_pred[ln pref(o)]
    epistemic = E_{q(o)} KL[q(x|o) || q(x)]   (information gain, >= 0)

    The recombination ``total = -extrinsic - epistemic`` is exact when the
    preference joint factorizes as pref(o) * q(x|o); build it with
    :meth:`JointModel.from_observation_factorization` for that guarantee.
    """
    _require_preference_support(predictive, preference)
    pj = predictive.joint
    px = predictive.state_marginal
    xs, os_ = np.nonzero(pj)
    j = pj[xs, os_]
    total = float(np.sum(j * (np.log(px[xs]) - np.log(preference.joint[xs, os_]))))
    pref_o = preference.observation_marginal
    extrinsic = float(np.sum(j * np.log(pref_o[os_])))
    return FreeEnergyBreakdown(
        total=total,
        extrinsic=extrinsic,
        epistemic=_mutual_information(pj),
        kind=FreeEnergyKind.EFE,
    )


def fef(predictive: JointModel, preference: JointModel) -> FreeEnergyBreakdown:
    """Free energy of the future: epistemic term enters with flipped sign.

    total     = E_pred[ln q(x|o) - ln pref(o, x)]
    extrinsic = E_pred[ln pref(o|x)]
    epistemic = identical to the EFE epistemic term for the same inputs

    ``total = -extrinsic + epistemic`` is exact when the preference joint
    factorizes as q(x) * pref(o|x); build it with
    :meth:`JointModel.from_state_factorization` for that guarantee.
    """
    _require_preference_support(predictive, preference)
    pj = predictive.joint
    po = predictive.observation_marginal
    pref_x = preference.state_marginal
    xs, os_ = np.nonzero(pj)
    j = pj[xs, os_]
    log_pref = np.log(preference.joint[xs, os_])
    total = float(np.sum(j * (np.log(j) - np.log(po[os_]) - log_pref)))
    extrinsic = float(np.sum(j * (log_pref - np.log(pref_x[xs]))))
    return FreeEnergyBreakdown(
        total=total,
        extrinsic=extrinsic,
        epistemic=_mutual_information(pj),
        kind=FreeEnergyKind.FEF,
    )


def efe_observation_space(
    predictive: JointModel, preference_over_o: DiscreteDistribution
) -> FreeEnergyBreakdown:
    """Expected free energy with the preference given directly over outcomes.

    total = -E_{q(o)}[ln pref(o)] - E_{q(x)} KL[q(o|x) || q(o)]

    Matches ``efe(predictive, pref(o) * q(x|o)).total`` to rounding.
    """
    if preference_over_o.support_size != predictive.n_observations:
        raise SupportMismatchError("preference support does not match observation axis")
    q_o = predictive.observation_marginal
    mask = q_o > 0
    if np.any(preference_over_o.probabilities[mask] == 0):
        raise AbsoluteContinuityError("predicted outcomes with zero preference mass")
    extrinsic = float(np.sum(q_o[mask] * np.log(preference_over_o.probabilities[mask])))
    epistemic = _mutual_information(predictive.joint)
    return FreeEnergyBreakdown(
        total=-extrinsic - epistemic,
        extrinsic=extrinsic,
        epistemic=epistemic,
        kind=FreeEnergyKind.EFE,
    )


def fef_observation_space(
    predictive: JointModel, preference_channel: np.ndarray
) -> FreeEnergyBreakdown:
    """Future free energy with the preference given as a channel pref(o | x).

    total = -E_pred[ln pref(o|x)] + E_{q(x)} KL[q(o|x) || q(o)]

    The information gain enters with positive sign. Matches
    ``fef(predictive, q(x) * pref(o|x)).total`` to rounding.
    """
    channel = _validated_channel(preference_channel, "preference_channel",
                                 predictive.n_states)
    if channel.shape[1] != predictive.n_observations:
        raise SupportMismatchError("preference channel does not match observation axis")
    pj = predictive.joint
    xs, os_ = np.nonzero(pj)
    if np.any(channel[xs, os_] == 0):
        raise AbsoluteContinuityError("predicted pairs with zero preference likelihood")
    extrinsic = float(np.sum(pj[xs, os_] * np.log(channel[xs, os_])))
    epistemic = _mutual_information(pj)
    return FreeEnergyBreakdown(
        total=-extrinsic + epistemic,
        extrinsic=extrinsic,
        epistemic=epistemic,
        kind=FreeEnergyKind.FEF,
    )


@dataclass(frozen=True)
class PreferenceModel:
    """Boltzmann prior over a finite set of loss values.

    ``probabilities[i]`` is proportional to ``exp(-beta * loss_values[i])``;
    ``log_partition`` stores ln(Z). Probability ratios obey
    ``p_i / p_j = exp(-beta * (L_i - L_j))``.
    """

    beta: float
    loss_values: np.ndarray
    probabilities: DiscreteDistribution
    log_partition: float

    def __post_init__(self) -> None:
        losses = np.asarray(self.loss_values, dtype=np.float64)
        if losses.ndim != 1 or losses.size == 0 or not np.all(np.isfinite(losses)):
            raise ValueError("loss_values must be a non-empty finite 1-d array")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.probabilities.support_size != losses.size:
            raise SupportMismatchError("probabilities and loss_values differ in length")
        losses = losses.copy()
        losses.setflags(write=False)
        object.__setattr__(self, "loss_values", losses)
        # Reconstruct the weights with the same max-shift used to build them.
        scaled = -self.beta * losses
        shift = float(scaled.max())
        weights = np.exp(scaled - shift)
        expected = weights / weights.sum()
        if np.max(np.abs(expected - self.probabilities.probabilities)) > PREFERENCE_TOL:
            raise ValueError("probabilities are not the Boltzmann weights of loss_values")
        expected_log_z = shift + math.log(float(weights.sum()))
        if abs(expected_log_z - self.log_partition) > PREFERENCE_TOL:
            raise ValueError("log_partition does not match the Boltzmann weights")

    def desirability(self, index: int) -> float:
        return self.probabilities[index]


def boltzmann_prior(loss_values: Sequence[float], beta: float) -> PreferenceModel:
    """Boltzmann preference prior exp(-beta * L) / Z over loss values.

    beta = 0 gives a uniform prior. The partition function is evaluated with
    a max-shift so large beta cannot overflow.
    """
    losses = np.asarray(loss_values, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise ValueError("loss_values must be non-empty")
    if not np.all(np.isfinite(losses)):
        raise ValueError("loss_values must be finite")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    scaled = -float(beta) * losses
    shift = float(scaled.max())
    weights = np.exp(scaled - shift)
    z_shifted = float(weights.sum())
    probabilities = DiscreteDistribution(weights / z_shifted)
    return PreferenceModel(
        beta=float(beta),
        loss_values=losses,
        probabilities=probabilities,
        log_partition=shift + math.log(z_shifted),
    )


def calibrate_beta(
    p_max_desirability: float,
    p_min_desirability: float,
    loss_min: float,
    loss_max: float,
) -> float:
    """Back out beta from desirabilities assigned to a loss range.

    ``p_min_desirability`` is the stakeholder weight on the minimum loss and
    ``p_max_desirability`` the weight on the maximum loss; the minimum loss
    must be at least as desirable. Round-trips with :func:`boltzmann_prior`
    on the two-point support {loss_min, loss_max}.
    """
    for name, p in (("p_max_desirability", p_max_desirability),
                    ("p_min_desirability", p_min_desirability)):
        if not 0.0 < p <= 1.0:
            raise ValueError(f"{name} must be in (0, 1], got {p!r}")
    if loss_max <= loss_min:
        raise ValueError("loss_max must exceed loss_min")
    if p_min_desirability < p_max_desirability:
        raise ValueError(
            "the minimum loss must be at least as desirable as the maximum loss"
        )
    return math.log(p_min_desirability / p_max_desirability) / (loss_max - loss_min)


def instantaneous_risk(
    energy: float, entropy_term: float, beta: float, entropy_sign: int
) -> float:
    """One-step risk: energy plus an optionally signed entropic correction.

    ``entropy_sign`` selects +1, -1, or 0; 0 drops the entropic term
    entirely (the fully observable regime) and ignores beta.
    """
    if entropy_sign not in (-1, 0, 1):
        raise ValueError("entropy_sign must be one of -1, 0, +1")
    if entropy_sign == 0:
        return float(energy)
    if beta <= 0:
        raise ValueError("beta must be positive when the entropic term is active")
    return float(energy) + entropy_sign * entropy_term / beta


def cumulative_risk(per_step_risks: Sequence[float], gamma: float) -> float:
    """Discounted sum of per-step risks: sum_t gamma^t * risk[t].

    Accumulates sequentially in time order so results are reproducible
    bit-for-bit against other in-order accumulations of the same terms.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma!r}")
    risks = np.asarray(per_step_risks, dtype=np.float64)
    if risks.ndim != 1 or risks.size == 0:
        raise ValueError("per_step_risks must be a non-empty sequence")
    total = 0.0
    weight = 1.0
    for r in risks:
        total += weight * float(r)
        weight *= gamma
    return total
