"""The authoritative road world: population, stepping, collisions, termination.

A world is a closed ring of lanes holding a fixed vehicle population. One
world step is 1 second of simulated time executed as 10 physics substeps of
0.1 s (car-following and collision detection), followed by one lane-change
decision round and reward scoring at the step boundary. Trajectories are
fully determined by (config, seed): there is no hidden randomness in the
main stepping path, and cloning is the only sanctioned way to evolve a
world along multiple futures.

State is held in flat per-vehicle arrays so the compiled kernels can run on
it directly; :class:`VehicleState` views are materialized on demand for the
object-level API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels
from .driving import ALTER, HARD_BRAKE, HOTSHOT, PolicyParams, Role, VehicleState
from .rewards import RewardBreakdown, RewardConfig

WORLD_STEP_SECONDS = 1.0
PHYSICS_SUBSTEPS = 10
SUBSTEP_DT = WORLD_STEP_SECONDS / PHYSICS_SUBSTEPS

# Initial speeds are drawn uniformly from this fraction band of each
# vehicle's desired speed, which seeds the early transient.
INITIAL_SPEED_FRACTION = (0.6, 1.0)


class PlacementError(RuntimeError):
    """Could not place the requested population on the given geometry."""


class TerminatedWorldError(RuntimeError):
    """Stepping was requested on a world that has already terminated."""


class TerminationReason(str, Enum):
    TRACKED_CRASH = "TrackedCrash"
    JAM = "Jam"
    HORIZON_REACHED = "HorizonReached"


@dataclass(frozen=True)
class RoadGeometry:
    """Closed-loop track: ring length, lane count, lane width."""

    lane_count: int = 3
    lane_width: float = 4.0
    ring_length: float = 500.0

    def __post_init__(self) -> None:
        if self.lane_count < 2:
            raise ValueError("lane_count must be at least 2")
        if self.lane_width <= 0 or self.ring_length <= 0:
            raise ValueError("lane_width and ring_length must be positive")


@dataclass(frozen=True)
class WorldConfig:
    """Population and run-length parameters for one world."""

    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    n_ego: int = 12
    n_alter: int = 12
    ego_params: PolicyParams = HOTSHOT.params
    alter_params: PolicyParams = ALTER.params
    vehicle_length: float = 5.0
    horizon_steps: int = 80
    jam_threshold: int = 6
    n_tracked: int = 4

    def __post_init__(self) -> None:
        if self.n_ego < 0 or self.n_alter < 0 or self.n_ego + self.n_alter == 0:
            raise ValueError("need a positive vehicle population")
        if self.vehicle_length <= 0:
            raise ValueError("vehicle_length must be positive")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be at least 1")
        if self.jam_threshold < 1:
            raise ValueError("jam_threshold must be at least 1")
        if self.n_tracked < 0:
            raise ValueError("n_tracked must be non-negative")


class ParamArrays:
    """Struct-of-arrays mirror of per-vehicle :class:`PolicyParams`."""

    FLOAT_FIELDS = (
        "desired_speed", "time_headway", "min_gap", "max_accel", "comfort_decel",
        "accel_exponent", "politeness", "gain_threshold", "safe_brake_limit",
    )

    def __init__(self, params_list: list[PolicyParams]):
        for name in self.FLOAT_FIELDS:
            setattr(self, name,
                    np.array([getattr(p, name) for p in params_list], dtype=np.float64))
        self.lane_change_cooldown = np.array(
            [p.lane_change_cooldown for p in params_list], dtype=np.int64
        )

    def get(self, index: int) -> PolicyParams:
        kwargs = {name: float(getattr(self, name)[index]) for name in self.FLOAT_FIELDS}
        kwargs["lane_change_cooldown"] = int(self.lane_change_cooldown[index])
        return PolicyParams(**kwargs)

    def set(self, index: int, params: PolicyParams) -> None:
        for name in self.FLOAT_FIELDS:
            getattr(self, name)[index] = getattr(params, name)
        self.lane_change_cooldown[index] = params.lane_change_cooldown

    def copy(self) -> "ParamArrays":
        dup = object.__new__(ParamArrays)
        for name in self.FLOAT_FIELDS:
            setattr(dup, name, getattr(self, name).copy())
        dup.lane_change_cooldown = self.lane_change_cooldown.copy()
        return dup


@dataclass
class StepOutcome:
    """What one world step produced."""

    per_ego_rewards: dict[int, RewardBreakdown]
    new_collisions: list[tuple[int, int]]
    terminated: Optional[TerminationReason]
    n_lane_changes: int = 0


@dataclass
class WorldState:
    """Full road snapshot, exclusively owned by one execution context."""

    geometry: RoadGeometry
    seed: int
    horizon_steps: int
    jam_threshold: int
    step: int
    rng: np.random.Generator
    tracked_ego_ids: np.ndarray
    terminated: Optional[TerminationReason]
    roles: np.ndarray
    lanes: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    lengths: np.ndarray
    crashed: np.ndarray
    cooldowns: np.ndarray
    params: ParamArrays

    @property
    def n_vehicles(self) -> int:
        return int(self.positions.size)

    @property
    def ego_ids(self) -> np.ndarray:
        return np.flatnonzero(self.roles == int(Role.EGO))

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def vehicle(self, vehicle_id: int) -> VehicleState:
        i = int(vehicle_id)
        return VehicleState(
            vehicle_id=i,
            role=Role(int(self.roles[i])),
            lane=int(self.lanes[i]),
            position=float(self.positions[i]),
            speed=float(self.speeds[i]),
            length=float(self.lengths[i]),
            crashed=bool(self.crashed[i]),
            active_params=self.params.get(i),
            cooldown_remaining=int(self.cooldowns[i]),
        )

    @property
    def vehicles(self) -> list[VehicleState]:
        return [self.vehicle(i) for i in range(self.n_vehicles)]

    def set_vehicle_params(self, vehicle_id: int, params: PolicyParams) -> None:
        self.params.set(int(vehicle_id), params)


def init_world(config: WorldConfig, seed: int) -> WorldState:
    """Place the population on the ring, deterministically from the seed.

    Lanes are drawn uniformly; within each lane, vehicles keep a bumper gap
    of at least twice the follower's minimum-gap parameter with random
    jitter distributed over the remaining slack. Initial speeds are drawn
    uniformly from a fraction band of each vehicle's desired speed.
    """
    geo = config.geometry
    n = config.n_ego + config.n_alter
    if geo.ring_length <= n * config.vehicle_length:
        raise PlacementError(
            f"ring of {geo.ring_length} m cannot hold {n} vehicles of "
            f"{config.vehicle_length} m (seed {seed})"
        )
    rng = np.random.default_rng(seed)

    roles = np.empty(n, dtype=np.int8)
    roles[: config.n_ego] = int(Role.EGO)
    roles[config.n_ego:] = int(Role.ALTER)
    params_list = [
        config.ego_params if roles[i] == int(Role.EGO) else config.alter_params
        for i in range(n)
    ]
    params = ParamArrays(params_list)
    lengths = np.full(n, config.vehicle_length, dtype=np.float64)

    lanes = rng.integers(0, geo.lane_count, size=n).astype(np.int64)
    positions = np.empty(n, dtype=np.float64)
    for lane in range(geo.lane_count):
        members = np.flatnonzero(lanes == lane)
        k = members.size
        if k == 0:
            continue
        # Center-to-center clearance ahead of each member, ring-closed.
        ahead = np.roll(members, -1)
        min_gaps = 0.5 * (lengths[members] + lengths[ahead]) + 2.0 * params.min_gap[members]
        required = float(min_gaps.sum()) if k > 1 else float(min_gaps[0])
        if required > geo.ring_length:
            raise PlacementError(
                f"lane {lane} drew {k} vehicles needing {required:.1f} m on a "
                f"{geo.ring_length} m ring (seed {seed})"
            )
        start = rng.uniform(0.0, geo.ring_length)
        # Exponential jitter gives Poisson-like spacing with a hard core:
        # tight platoons and open stretches rather than an even spread.
        jitter = rng.exponential(1.0, size=k)
        extra = (geo.ring_length - required) * jitter / jitter.sum()
        cursor = start
        for j, vid in enumerate(members):
            positions[vid] = cursor % geo.ring_length
            cursor += float(min_gaps[j]) + float(extra[j])

    speeds = rng.uniform(*INITIAL_SPEED_FRACTION, size=n) * params.desired_speed

    n_tracked = min(config.n_tracked, config.n_ego)
    return WorldState(
        geometry=geo,
        seed=int(seed),
        horizon_steps=config.horizon_steps,
        jam_threshold=config.jam_threshold,
        step=0,
        rng=rng,
        tracked_ego_ids=np.arange(n_tracked, dtype=np.int64),
        terminated=None,
        roles=roles,
        lanes=lanes,
        positions=positions,
        speeds=speeds,
        lengths=lengths,
        crashed=np.zeros(n, dtype=np.bool_),
        cooldowns=np.zeros(n, dtype=np.int64),
        params=params,
    )


def _reward_args(config: RewardConfig) -> tuple:
    return (
        config.speed_reward_peak, config.speed_reward_width, config.target_speed,
        config.collision_penalty, config.defensive_scale, config.proximity_penalty,
        config.defensive_max, config.neighbor_radius,
        config.weight_speed, config.weight_defensive, config.weight_collision,
    )


def step(
    world: WorldState,
    reward_config: RewardConfig,
    enforce_termination: bool = True,
) -> StepOutcome:
    """Advance the world by one step and score the egos.

    Substeps integrate car-following physics with per-substep collision
    detection; the lane-change round then runs once against the post-substep
    state and applies all accepted changes simultaneously; rewards are
    computed on the resulting end-of-step state. Raises
    :class:`TerminatedWorldError` if the world has already terminated.
    """
    if world.terminated is not None:
        raise TerminatedWorldError(f"world terminated: {world.terminated.value}")
    n = world.n_vehicles
    p = world.params
    zeros_noise = np.zeros((PHYSICS_SUBSTEPS, n))
    no_flips = np.zeros((n, 2))
    exempt_all = np.ones(n, dtype=np.bool_)
    pair_buf = np.empty((n * n, 2), dtype=np.int64)

    n_col = _kernels.advance_substeps(
        world.positions, world.speeds, world.lanes, world.lengths, world.crashed,
        p.desired_speed, p.time_headway, p.min_gap, p.max_accel, p.comfort_decel,
        p.accel_exponent,
        world.geometry.ring_length, SUBSTEP_DT, PHYSICS_SUBSTEPS,
        zeros_noise, exempt_all, HARD_BRAKE,
        pair_buf,
    )
    n_changes = _kernels.lane_change_pass(
        world.positions, world.speeds, world.lanes, world.lengths, world.crashed,
        world.cooldowns,
        p.desired_speed, p.time_headway, p.min_gap, p.max_accel, p.comfort_decel,
        p.accel_exponent, p.politeness, p.gain_threshold, p.safe_brake_limit,
        p.lane_change_cooldown,
        world.geometry.lane_count, world.geometry.ring_length,
        no_flips, 0.0, exempt_all,
        HARD_BRAKE,
    )
    ego_idx = world.ego_ids
    n_ego = ego_idx.size
    rs = np.empty(n_ego)
    rc = np.empty(n_ego)
    rd = np.empty(n_ego)
    loss = np.empty(n_ego)
    _kernels.ego_rewards(
        world.positions, world.speeds, world.lanes, world.crashed,
        ego_idx, world.geometry.ring_length,
        *_reward_args(reward_config),
        rs, rc, rd, loss,
    )
    per_ego = {
        int(ego_idx[e]): RewardBreakdown(
            r_speed=float(rs[e]), r_collision=float(rc[e]),
            r_defensive=float(rd[e]), loss=float(loss[e]),
        )
        for e in range(n_ego)
    }
    new_collisions = [
        (int(pair_buf[k, 0]), int(pair_buf[k, 1])) for k in range(n_col)
    ]
    world.step += 1
    reason = check_termination(world) if enforce_termination else None
    world.terminated = reason
    return StepOutcome(
        per_ego_rewards=per_ego,
        new_collisions=new_collisions,
        terminated=reason,
        n_lane_changes=int(n_changes),
    )


def detect_collisions(world: WorldState) -> list[tuple[int, int]]:
    """All same-lane overlapping pairs right now; overlapping vehicles get flagged.

    A pair overlaps when its along-track center distance is strictly below
    the mean of the two lengths. The boundary case (distance exactly equal)
    is not a collision.
    """
    pairs: list[tuple[int, int]] = []
    ring = world.geometry.ring_length
    n = world.n_vehicles
    for i in range(n):
        for j in range(i + 1, n):
            if world.lanes[i] != world.lanes[j]:
                continue
            d = float((world.positions[j] - world.positions[i]) % ring)
            if d > 0.5 * ring:
                d = ring - d
            if d < 0.5 * float(world.lengths[i] + world.lengths[j]):
                pairs.append((i, j))
                world.crashed[i] = True
                world.crashed[j] = True
    return pairs


def check_termination(world: WorldState) -> Optional[TerminationReason]:
    """Tracked-ego crash beats jam beats horizon; None while the run lives."""
    if world.tracked_ego_ids.size and bool(world.crashed[world.tracked_ego_ids].any()):
        return TerminationReason.TRACKED_CRASH
    if int(world.crashed.sum()) >= world.jam_threshold:
        return TerminationReason.JAM
    if world.step >= world.horizon_steps:
        return TerminationReason.HORIZON_REACHED
    return None


def clone_world(world: WorldState) -> WorldState:
    """Deep, independent copy; the clone's generator continues the same stream.

    Mutating the clone never affects the original. Callers running Monte
    Carlo rollouts replace the clone's ``rng`` with their own seeded
    generator.
    """
    bitgen = np.random.PCG64()
    bitgen.state = world.rng.bit_generator.state
    return WorldState(
        geometry=world.geometry,
        seed=world.seed,
        horizon_steps=world.horizon_steps,
        jam_threshold=world.jam_threshold,
        step=world.step,
        rng=np.random.Generator(bitgen),
        tracked_ego_ids=world.tracked_ego_ids.copy(),
        terminated=world.terminated,
        roles=world.roles.copy(),
        lanes=world.lanes.copy(),
        positions=world.positions.copy(),
        speeds=world.speeds.copy(),
        lengths=world.lengths.copy(),
        crashed=world.crashed.copy(),
        cooldowns=world.cooldowns.copy(),
        params=world.params.copy(),
    )
