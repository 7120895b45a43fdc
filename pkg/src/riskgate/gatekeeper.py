"""Per-vehicle risk monitors: Monte Carlo risk estimates and policy control.

A gatekeeper watches one ego vehicle. At a fixed cadence it scores the
world's near future by rolling seeded Monte Carlo copies of the world
forward under frozen policies with behavioral perturbations on the other
vehicles, accumulating each ego's discounted loss. The per-ego estimates
are averaged over spatial neighborhoods, and the averaged risk drives a
dual-threshold hysteresis switch between the Hotshot and Defensive presets
with a graduated 10-step parameter handover.

One batch of rollouts per evaluation scores every ego at once; rollout
sub-seeds derive deterministically from (world seed, world step, rollout
index), so a full run is reproducible from its configuration alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from . import _kernels
from .driving import (
    HARD_BRAKE,
    PolicyParams,
    VehicleState,
    interpolate_params,
    ring_signed_delta,
)
from .rewards import RewardConfig
from .world import PHYSICS_SUBSTEPS, SUBSTEP_DT, TerminatedWorldError, WorldState, _reward_args

# World steps over which a policy handover is graduated.
TRANSITION_STEPS = 10

_SEED_MASK = (1 << 64) - 1


class TransitionStateError(RuntimeError):
    """A transition operation was applied without an active transition."""


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo evaluation settings.

    ``accel_noise_sigma`` perturbs the acceleration of every vehicle except
    the exempt set per substep; ``lane_change_flip_prob`` inverts individual
    lane-change decisions of non-exempt vehicles. ``seed_salt`` selects an
    independent rollout seed stream.
    """

    n_mc: int = 128
    horizon: int = 10
    cadence: int = 5
    accel_noise_sigma: float = 0.5
    lane_change_flip_prob: float = 0.05
    seed_salt: int = 0

    def __post_init__(self) -> None:
        if self.n_mc < 1:
            raise ValueError("n_mc must be at least 1")
        if self.horizon < 1 or self.cadence < 1:
            raise ValueError("horizon and cadence must be at least 1")
        if self.accel_noise_sigma < 0:
            raise ValueError("accel_noise_sigma must be non-negative")
        if not 0.0 <= self.lane_change_flip_prob <= 1.0:
            raise ValueError("lane_change_flip_prob must lie in [0, 1]")


@dataclass(frozen=True)
class RiskEstimate:
    """Cumulative risk exposure of one ego from a rollout batch.

    With entropic terms dropped (the fully observable regime), the risk is
    the expected discounted loss, so ``cre`` and ``energy_mean`` coincide.
    ``step_energy`` is the undiscounted per-step expected loss, the quantity
    logged as the energy series.
    """

    vehicle_id: int
    cre: float
    energy_mean: float
    sample_std: float
    n_samples: int
    step_energy: float


@dataclass(frozen=True)
class Thresholds:
    """Dual risk thresholds around a set-point.

    The defaults derive the engage threshold as 1.1x the set-point and the
    release threshold as 0.9x, so the band is sticky in both directions.
    """

    rho_star: float
    rho_plus: Optional[float] = None
    rho_minus: Optional[float] = None

    def __post_init__(self) -> None:
        if self.rho_plus is None:
            object.__setattr__(self, "rho_plus", 1.1 * self.rho_star)
        if self.rho_minus is None:
            object.__setattr__(self, "rho_minus", 0.9 * self.rho_star)
        if not self.rho_minus < self.rho_star < self.rho_plus:
            raise ValueError(
                f"thresholds must satisfy rho_minus < rho_star < rho_plus, got "
                f"{self.rho_minus!r} < {self.rho_star!r} < {self.rho_plus!r}"
            )


class GatekeeperMode(str, Enum):
    HOTSHOT = "Hotshot"
    DEFENSIVE = "Defensive"


@dataclass(frozen=True)
class ParamTransition:
    """An in-flight graduated handover between two parameter sets."""

    from_params: PolicyParams
    to_params: PolicyParams
    steps_remaining: int
    total_steps: int = TRANSITION_STEPS

    @property
    def fraction(self) -> float:
        return (self.total_steps - self.steps_remaining) / self.total_steps


@dataclass(frozen=True)
class GatekeeperState:
    """Controller bookkeeping for one monitored vehicle.

    ``mode`` flips at the decision that triggers a handover; the transition
    then walks the vehicle's active parameters to the target preset over
    ``TRANSITION_STEPS`` world steps.
    """

    vehicle_id: int
    mode: GatekeeperMode
    hotshot_params: PolicyParams
    defensive_params: PolicyParams
    transition: Optional[ParamTransition] = None
    last_risk: Optional[float] = None

    def target_params(self, mode: GatekeeperMode) -> PolicyParams:
        return self.hotshot_params if mode is GatekeeperMode.HOTSHOT else self.defensive_params

    def active_params(self) -> PolicyParams:
        """Parameters currently in force, mid-transition interpolation included."""
        if self.transition is None:
            return self.target_params(self.mode)
        t = self.transition
        return interpolate_params(t.from_params, t.to_params, t.fraction)


def rollout_seed_sequence(
    world_seed: int, world_step: int, rollout_index: int, salt: int = 0
) -> np.random.SeedSequence:
    """Deterministic, well-mixed sub-seed for one rollout of one evaluation."""
    return np.random.SeedSequence(
        (world_seed & _SEED_MASK, world_step, salt, rollout_index)
    )


def _exempt_mask(world: WorldState, noise_exempt_ids: Iterable[int]) -> np.ndarray:
    mask = np.zeros(world.n_vehicles, dtype=np.bool_)
    for vid in noise_exempt_ids:
        mask[int(vid)] = True
    return mask


def _rollout_losses(
    world: WorldState,
    rng: np.random.Generator,
    config: MCConfig,
    reward_config: RewardConfig,
    exempt: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One rollout on array copies; returns (ego_ids, discounted, undiscounted)."""
    n = world.n_vehicles
    tau = config.horizon
    noise = rng.normal(0.0, config.accel_noise_sigma, size=(tau * PHYSICS_SUBSTEPS, n))
    flip_u = rng.random(size=(tau, n, 2))
    ego_idx = world.ego_ids
    disc = np.empty(ego_idx.size)
    undisc = np.empty(ego_idx.size)
    p = world.params.copy()
    _kernels.run_rollout(
        world.positions.copy(), world.speeds.copy(), world.lanes.copy(),
        world.lengths.copy(), world.crashed.copy(), world.cooldowns.copy(),
        p.desired_speed, p.time_headway, p.min_gap, p.max_accel, p.comfort_decel,
        p.accel_exponent, p.politeness, p.gain_threshold, p.safe_brake_limit,
        p.lane_change_cooldown,
        ego_idx, world.geometry.lane_count, world.geometry.ring_length,
        SUBSTEP_DT, PHYSICS_SUBSTEPS,
        tau, reward_config.discount,
        *_reward_args(reward_config),
        noise, flip_u, config.lane_change_flip_prob, exempt, HARD_BRAKE,
        disc, undisc,
    )
    return ego_idx, disc, undisc


def rollout(
    world: WorldState,
    rollout_seed: int | np.random.SeedSequence,
    config: MCConfig,
    reward_config: RewardConfig,
    noise_exempt_ids: Iterable[int] = (),
) -> dict[int, float]:
    """Score one seeded future: per-ego discounted loss over the horizon.

    The world is copied, stepped ``config.horizon`` world steps under frozen
    policies (no nested gatekeeping) with acceleration noise and lane-change
    flips on all vehicles outside ``noise_exempt_ids``, and left untouched.
    """
    if world.terminated is not None:
        raise TerminatedWorldError(f"world terminated: {world.terminated.value}")
    rng = np.random.default_rng(rollout_seed)
    ego_idx, disc, _ = _rollout_losses(
        world, rng, config, reward_config, _exempt_mask(world, noise_exempt_ids)
    )
    return {int(ego_idx[e]): float(disc[e]) for e in range(ego_idx.size)}


def estimate_cre(
    world: WorldState,
    config: MCConfig,
    reward_config: RewardConfig,
    noise_exempt_ids: Iterable[int] = (),
) -> dict[int, RiskEstimate]:
    """Monte Carlo risk estimate for every ego from one batch of rollouts.

    Sub-seeds derive from (world seed, world step, rollout index), so the
    batch is reproducible and shared by all egos. The estimate per ego is
    the sample mean of the discounted rollout losses, with the sample
    standard deviation reported alongside.
    """
    if world.terminated is not None:
        raise TerminatedWorldError(f"world terminated: {world.terminated.value}")
    exempt = _exempt_mask(world, noise_exempt_ids)
    ego_idx = world.ego_ids
    disc = np.empty((config.n_mc, ego_idx.size))
    undisc = np.empty((config.n_mc, ego_idx.size))
    for r in range(config.n_mc):
        seq = rollout_seed_sequence(world.seed, world.step, r, config.seed_salt)
        rng = np.random.default_rng(seq)
        _, disc[r], undisc[r] = _rollout_losses(world, rng, config, reward_config, exempt)
    cre = disc.mean(axis=0)
    if config.n_mc > 1:
        std = disc.std(axis=0, ddof=1)
    else:
        std = np.zeros(ego_idx.size)
    step_energy = undisc.mean(axis=0) / config.horizon
    return {
        int(ego_idx[e]): RiskEstimate(
            vehicle_id=int(ego_idx[e]),
            cre=float(cre[e]),
            energy_mean=float(cre[e]),
            sample_std=float(std[e]),
            n_samples=config.n_mc,
            step_energy=float(step_energy[e]),
        )
        for e in range(ego_idx.size)
    }


def neighborhood_average(
    risks: Mapping[int, RiskEstimate],
    world: WorldState,
    radius: float,
) -> dict[int, float]:
    """Replace each monitored ego's risk with its local neighborhood mean.

    The neighborhood of an ego is every ego in ``risks`` within the given
    ring distance, itself included; an isolated ego keeps its own estimate.
    """
    ids = sorted(risks)
    averaged: dict[int, float] = {}
    for j in ids:
        members = [
            risks[i].cre
            for i in ids
            if abs(
                ring_signed_delta(
                    float(world.positions[j]), float(world.positions[i]),
                    world.geometry.ring_length,
                )
            )
            <= radius
        ]
        averaged[j] = float(np.mean(members))
    return averaged


def decide(
    state: GatekeeperState, averaged_risk: float, thresholds: Thresholds
) -> GatekeeperState:
    """Hysteresis switch: engage Defensive above the upper threshold,
    release to Hotshot below the lower one, hold inside the band.

    A triggered handover starts from the currently active (possibly
    mid-transition) parameters with a fresh graduation count; re-asserting
    the current mode is a no-op.
    """
    target: Optional[GatekeeperMode] = None
    if state.mode is GatekeeperMode.HOTSHOT and averaged_risk > thresholds.rho_plus:
        target = GatekeeperMode.DEFENSIVE
    elif state.mode is GatekeeperMode.DEFENSIVE and averaged_risk < thresholds.rho_minus:
        target = GatekeeperMode.HOTSHOT
    if target is None:
        return replace(state, last_risk=averaged_risk)
    transition = ParamTransition(
        from_params=state.active_params(),
        to_params=state.target_params(target),
        steps_remaining=TRANSITION_STEPS,
        total_steps=TRANSITION_STEPS,
    )
    return replace(state, mode=target, transition=transition, last_risk=averaged_risk)


def apply_transition(
    state: GatekeeperState, vehicle: VehicleState
) -> tuple[GatekeeperState, VehicleState]:
    """Advance an active handover by one step and update the vehicle's params.

    After ``total_steps`` applications the vehicle carries the target
    parameters exactly and the transition clears.
    """
    if state.transition is None:
        raise TransitionStateError(f"vehicle {state.vehicle_id} has no active transition")
    t = state.transition
    remaining = t.steps_remaining - 1
    advanced = replace(t, steps_remaining=remaining)
    params = interpolate_params(t.from_params, t.to_params, advanced.fraction)
    new_state = replace(state, transition=None if remaining == 0 else advanced)
    new_vehicle = replace(vehicle, active_params=params)
    return new_state, new_vehicle
