"""Deterministic per-vehicle driving behavior.

Longitudinal control follows the intelligent-driver car-following law and
lane changes follow the minimize-overall-braking criterion: a hard safety
veto on the deceleration imposed on the new follower, plus a
politeness-weighted acceleration incentive. Three behavioral presets are
provided (Defensive, Hotshot, Alter) together with linear parameter
interpolation used for graduated policy handovers.

All functions here are pure and deterministic: identical inputs give
identical outputs, with no hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional, Sequence

# Physical braking limit (m/s^2): clamps commanded deceleration and is the
# rate at which crashed vehicles grind to rest.
HARD_BRAKE = 8.0

# Clamp used when probing the raw deceleration a maneuver would demand.
# Demands beyond HARD_BRAKE must stay visible to the safety veto, so the
# probe is effectively unclamped.
SAFETY_PROBE_BRAKE = 1e9


class DegenerateGapError(ValueError):
    """Car-following gap is non-positive; the collision must be resolved first."""


class Role(IntEnum):
    EGO = 0
    ALTER = 1


@dataclass(frozen=True)
class PolicyParams:
    """Behavioral knobs for one vehicle.

    Units: speeds m/s, gaps m, accelerations m/s^2 (deceleration limits as
    positive magnitudes), headway s, cooldown in world steps.
    """

    desired_speed: float
    time_headway: float
    min_gap: float
    max_accel: float
    comfort_decel: float
    accel_exponent: float = 4.0
    politeness: float = 0.1
    gain_threshold: float = 0.2
    safe_brake_limit: float = 4.0
    lane_change_cooldown: int = 5

    def __post_init__(self) -> None:
        if self.desired_speed <= 0:
            raise ValueError("desired_speed must be positive")
        if self.time_headway < 0:
            raise ValueError("time_headway must be non-negative")
        if self.min_gap <= 0 or self.max_accel <= 0 or self.comfort_decel <= 0:
            raise ValueError("min_gap, max_accel and comfort_decel must be positive")
        if self.safe_brake_limit <= 0:
            raise ValueError("safe_brake_limit must be positive")
        if self.accel_exponent < 1:
            raise ValueError("accel_exponent must be >= 1")
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.lane_change_cooldown < 0:
            raise ValueError("lane_change_cooldown must be non-negative")


@dataclass(frozen=True)
class PolicyPreset:
    name: str
    params: PolicyParams

    def __post_init__(self) -> None:
        if self.name not in ("Defensive", "Hotshot", "Alter"):
            raise ValueError(f"unknown preset name {self.name!r}")


# Defensive: long headway, early lane-change reluctance.
DEFENSIVE = PolicyPreset(
    "Defensive",
    PolicyParams(
        desired_speed=30.0,
        time_headway=2.0,
        min_gap=10.0,
        max_accel=3.0,
        comfort_decel=5.0,
        accel_exponent=4.0,
        politeness=0.3,
        gain_threshold=0.8,
        safe_brake_limit=4.0,
    ),
)

# Hotshot: tailgates, accepts aggressive cut-ins, hops lanes for small gains.
HOTSHOT = PolicyPreset(
    "Hotshot",
    PolicyParams(
        desired_speed=32.0,
        time_headway=0.4,
        min_gap=3.0,
        max_accel=5.0,
        comfort_decel=8.0,
        accel_exponent=4.0,
        politeness=0.0,
        gain_threshold=0.05,
        safe_brake_limit=9.5,
    ),
)

# Alter: the background traffic; slower target speed, lane-change prone.
ALTER = PolicyPreset(
    "Alter",
    PolicyParams(
        desired_speed=21.0,
        time_headway=0.8,
        min_gap=3.5,
        max_accel=4.0,
        comfort_decel=7.0,
        accel_exponent=4.0,
        politeness=0.0,
        gain_threshold=0.05,
        safe_brake_limit=9.0,
    ),
)


def check_preset_contrast(defensive: PolicyParams, hotshot: PolicyParams) -> None:
    """Enforce the behavioral orderings the two ego presets must keep.

    Hotshot must tolerate shorter headways and gaps than Defensive and have
    a lower lane-change gain threshold. Raises ValueError otherwise.
    """
    if not hotshot.time_headway < defensive.time_headway:
        raise ValueError("Hotshot time_headway must be below Defensive's")
    if not hotshot.min_gap < defensive.min_gap:
        raise ValueError("Hotshot min_gap must be below Defensive's")
    if not hotshot.gain_threshold < defensive.gain_threshold:
        raise ValueError("Hotshot gain_threshold must be below Defensive's")


check_preset_contrast(DEFENSIVE.params, HOTSHOT.params)


@dataclass
class VehicleState:
    """Kinematic and behavioral state of one vehicle.

    ``position`` is the along-track coordinate of the vehicle center.
    Mutable by design: the owning world updates it in place; behavior
    functions in this module never do.
    """

    vehicle_id: int
    role: Role
    lane: int
    position: float
    speed: float
    length: float
    crashed: bool
    active_params: PolicyParams
    cooldown_remaining: int = 0


def ring_forward_distance(from_pos: float, to_pos: float, ring_length: Optional[float]) -> float:
    """Distance traveling forward from one position to another; plain delta off-ring."""
    if ring_length is None:
        return to_pos - from_pos
    return (to_pos - from_pos) % ring_length


def ring_signed_delta(from_pos: float, to_pos: float, ring_length: Optional[float]) -> float:
    """Signed along-track offset of ``to_pos`` relative to ``from_pos``.

    On a ring, the result lies in (-L/2, L/2]: positive means ahead.
    """
    if ring_length is None:
        return to_pos - from_pos
    d = (to_pos - from_pos) % ring_length
    if d > ring_length / 2.0:
        d -= ring_length
    return d


def idm_acceleration(
    self_speed: float,
    gap_to_leader: Optional[float],
    leader_speed: Optional[float],
    params: PolicyParams,
    max_brake: float = HARD_BRAKE,
) -> float:
    """Car-following acceleration toward the desired speed.

    With no leader this is the free-road law a*(1 - (v/v0)^exp). With a
    leader it subtracts the squared ratio of the desired dynamic gap

        s* = s0 + max(0, v*T + v*(v - v_lead) / (2*sqrt(a*b)))

    to the actual bumper gap. Output is clamped to [-max_brake, a].
    """
    v0 = params.desired_speed
    accel = params.max_accel * (1.0 - (self_speed / v0) ** params.accel_exponent)
    if gap_to_leader is not None:
        if gap_to_leader <= 0.0:
            raise DegenerateGapError(f"non-positive gap {gap_to_leader!r} with a leader present")
        closing = self_speed - (leader_speed if leader_speed is not None else 0.0)
        dynamic = self_speed * params.time_headway + self_speed * closing / (
            2.0 * math.sqrt(params.max_accel * params.comfort_decel)
        )
        s_star = params.min_gap + max(0.0, dynamic)
        accel -= params.max_accel * (s_star / gap_to_leader) ** 2
    return min(params.max_accel, max(-max_brake, accel))


@dataclass(frozen=True)
class LaneChangeEvaluation:
    """Outcome of judging one candidate lane."""

    change: bool
    safe: bool
    incentive: float


def _surrounding(
    subject: VehicleState,
    lane: int,
    neighbors: Sequence[VehicleState],
    ring_length: Optional[float],
) -> tuple[Optional[VehicleState], Optional[VehicleState], bool]:
    """Nearest leader/follower of ``subject`` in ``lane``, plus overlap flag."""
    leader = None
    follower = None
    lead_dist = math.inf
    follow_dist = math.inf
    overlap = False
    for other in neighbors:
        if other.vehicle_id == subject.vehicle_id or other.lane != lane:
            continue
        delta = ring_signed_delta(subject.position, other.position, ring_length)
        if abs(delta) < 0.5 * (subject.length + other.length):
            overlap = True
            continue
        if delta > 0 and delta < lead_dist:
            lead_dist = delta
            leader = other
        elif delta < 0 and -delta < follow_dist:
            follow_dist = -delta
            follower = other
    return leader, follower, overlap


def _bumper_gap(rear: VehicleState, front: VehicleState, ring_length: Optional[float]) -> float:
    center = ring_forward_distance(rear.position, front.position, ring_length)
    return center - 0.5 * (rear.length + front.length)


# Matches the floor used by the compiled path: prospective gaps can touch
# zero at the overlap boundary, where braking saturates anyway.
GAP_FLOOR = 1e-6


def _accel_behind(
    vehicle: VehicleState,
    leader: Optional[VehicleState],
    ring_length: Optional[float],
    max_brake: float = HARD_BRAKE,
) -> float:
    if leader is None:
        return idm_acceleration(vehicle.speed, None, None, vehicle.active_params,
                                max_brake=max_brake)
    gap = max(_bumper_gap(vehicle, leader, ring_length), GAP_FLOOR)
    return idm_acceleration(vehicle.speed, gap, leader.speed, vehicle.active_params,
                            max_brake=max_brake)


def evaluate_lane_change(
    subject: VehicleState,
    candidate_lane: int,
    neighbors: Sequence[VehicleState],
    params: PolicyParams,
    ring_length: Optional[float] = None,
) -> LaneChangeEvaluation:
    """Judge a move into an adjacent lane.

    Safety: the prospective new follower must not need to brake harder than
    ``params.safe_brake_limit``; a vehicle already alongside in the target
    lane vetoes outright. Incentive: the subject's acceleration gain plus
    the politeness-weighted gains of the old and new followers must exceed
    ``params.gain_threshold``.
    """
    if abs(candidate_lane - subject.lane) != 1:
        raise ValueError(
            f"candidate lane {candidate_lane} is not adjacent to lane {subject.lane}"
        )

    new_leader, new_follower, overlap = _surrounding(
        subject, candidate_lane, neighbors, ring_length
    )
    if overlap:
        return LaneChangeEvaluation(change=False, safe=False, incentive=-math.inf)
    old_leader, old_follower, _ = _surrounding(
        subject, subject.lane, neighbors, ring_length
    )

    # Safety veto on the raw deceleration demanded of the new follower;
    # probing unclamped keeps demands beyond the physical limit visible.
    safe = True
    if new_follower is not None:
        demanded = _accel_behind(new_follower, subject, ring_length,
                                 max_brake=SAFETY_PROBE_BRAKE)
        if demanded < -params.safe_brake_limit:
            safe = False

    a_self_before = _accel_behind(subject, old_leader, ring_length)
    a_self_after = _accel_behind(subject, new_leader, ring_length)
    gain_self = a_self_after - a_self_before

    gain_others = 0.0
    if new_follower is not None:
        before = _accel_behind(new_follower, new_leader, ring_length)
        after = _accel_behind(new_follower, subject, ring_length)
        gain_others += after - before
    if old_follower is not None:
        before = _accel_behind(old_follower, subject, ring_length)
        after = _accel_behind(old_follower, old_leader, ring_length)
        gain_others += after - before

    incentive = gain_self + params.politeness * gain_others
    return LaneChangeEvaluation(
        change=safe and incentive > params.gain_threshold,
        safe=safe,
        incentive=incentive,
    )


def mobil_lane_change(
    subject: VehicleState,
    candidate_lane: int,
    neighbors: Sequence[VehicleState],
    params: PolicyParams,
    ring_length: Optional[float] = None,
) -> bool:
    """True when the subject should move into the adjacent candidate lane."""
    return evaluate_lane_change(subject, candidate_lane, neighbors, params, ring_length).change


def interpolate_params(start: PolicyParams, end: PolicyParams, fraction: float) -> PolicyParams:
    """Linear blend of every numeric field; exact at both endpoints."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction!r}")

    def lerp(a: float, b: float) -> float:
        return (1.0 - fraction) * a + fraction * b

    return PolicyParams(
        desired_speed=lerp(start.desired_speed, end.desired_speed),
        time_headway=lerp(start.time_headway, end.time_headway),
        min_gap=lerp(start.min_gap, end.min_gap),
        max_accel=lerp(start.max_accel, end.max_accel),
        comfort_decel=lerp(start.comfort_decel, end.comfort_decel),
        accel_exponent=lerp(start.accel_exponent, end.accel_exponent),
        politeness=lerp(start.politeness, end.politeness),
        gain_threshold=lerp(start.gain_threshold, end.gain_threshold),
        safe_brake_limit=lerp(start.safe_brake_limit, end.safe_brake_limit),
        lane_change_cooldown=round(
            lerp(float(start.lane_change_cooldown), float(end.lane_change_cooldown))
        ),
    )


def preset_with_overrides(preset: PolicyPreset, **overrides: float) -> PolicyPreset:
    """A copy of ``preset`` with selected parameter fields replaced."""
    return replace(preset, params=replace(preset.params, **overrides))
