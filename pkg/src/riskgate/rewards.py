"""Stakeholder reward components and the scalar step loss.

Three per-vehicle, per-step components: a Gaussian speed reward peaked at a
target speed, a constant collision penalty, and a defensive-driving reward
that docks points for closing speed and proximity to neighbors (halved per
lane of separation). The step loss is the negative of the weighted sum of
the components after each is normalized by its own scale constant, so the
loss range is known in closed form from the weights alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .driving import VehicleState, ring_signed_delta


class DegenerateProximityError(ValueError):
    """Two vehicles at zero along-track distance; flag the overlap as a crash first."""


@dataclass(frozen=True)
class RewardConfig:
    """Scales and weights for the reward components.

    ``weight_*`` are the non-negative mixing weights applied to the
    normalized components, so the loss lies in
    [-(weight_speed + weight_defensive), weight_collision]. The default
    collision weight makes crash states dominate the loss, which is what
    lets risk monitors see them coming.
    """

    speed_reward_peak: float = 1.0
    speed_reward_width: float = 3.0
    target_speed: float = 30.0
    collision_penalty: float = 5.0
    defensive_scale: float = 0.1
    proximity_penalty: float = 1.0
    defensive_max: float = 1.0
    neighbor_radius: float = 30.0
    discount: float = 0.95
    weight_speed: float = 1.0
    weight_defensive: float = 1.0
    weight_collision: float = 6.0

    def __post_init__(self) -> None:
        if self.speed_reward_width <= 0:
            raise ValueError("speed_reward_width must be positive")
        if self.defensive_max <= 0:
            raise ValueError("defensive_max must be positive")
        for name in ("speed_reward_peak", "collision_penalty", "defensive_scale",
                     "proximity_penalty", "neighbor_radius",
                     "weight_speed", "weight_defensive", "weight_collision"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")

    @property
    def loss_bounds(self) -> tuple[float, float]:
        """(min, max) achievable step loss under this config."""
        return (-(self.weight_speed + self.weight_defensive), self.weight_collision)


@dataclass(frozen=True)
class RewardBreakdown:
    r_speed: float
    r_collision: float
    r_defensive: float
    loss: float


def speed_reward(speed: float, config: RewardConfig) -> float:
    """Gaussian reward peaked at the target speed."""
    z = (speed - config.target_speed) / config.speed_reward_width
    return config.speed_reward_peak * math.exp(-0.5 * z * z)


def collision_reward(crashed: bool, config: RewardConfig) -> float:
    """Constant penalty while in a collision state, zero otherwise."""
    return -config.collision_penalty if crashed else 0.0


def defensive_reward(
    subject: VehicleState,
    neighbors: Sequence[VehicleState],
    config: RewardConfig,
    ring_length: Optional[float] = None,
) -> float:
    """Defensive-driving reward docked for closing speed and proximity.

    For each neighbor within ``neighbor_radius``, the closing-speed term

        w = max(0, v_subject - v_other) if the other is ahead
            max(0, v_other - v_subject) if the other is behind

    is zero for pairs drifting apart and exactly abreast. Each neighbor
    contributes (w^2 + proximity_penalty) / (2^m * d) with m lanes of
    separation and center distance d. The total penalty is subtracted
    from ``defensive_max`` and the result clamped to [0, defensive_max].
    """
    penalty = 0.0
    for other in neighbors:
        if other.vehicle_id == subject.vehicle_id:
            continue
        delta = ring_signed_delta(subject.position, other.position, ring_length)
        distance = abs(delta)
        if distance > config.neighbor_radius:
            continue
        if distance == 0.0:
            raise DegenerateProximityError(
                f"vehicles {subject.vehicle_id} and {other.vehicle_id} at zero distance"
            )
        if delta > 0:
            closing = max(0.0, subject.speed - other.speed)
        else:
            closing = max(0.0, other.speed - subject.speed)
        m = abs(subject.lane - other.lane)
        penalty += (closing * closing + config.proximity_penalty) / (2.0**m * distance)
    raw = config.defensive_max - config.defensive_scale * penalty
    return min(config.defensive_max, max(0.0, raw))


def step_loss(
    r_speed: float, r_collision: float, r_defensive: float, config: RewardConfig
) -> float:
    """Negative weighted sum of the normalized reward components.

    Each component is divided by its own scale constant, mapping the speed
    and defensive rewards to [0, 1] and the collision reward to [-1, 0]
    before weighting. Zero scale constants contribute zero.
    """
    speed_hat = r_speed / config.speed_reward_peak if config.speed_reward_peak > 0 else 0.0
    defensive_hat = r_defensive / config.defensive_max
    collision_hat = r_collision / config.collision_penalty if config.collision_penalty > 0 else 0.0
    return -(
        config.weight_speed * speed_hat
        + config.weight_defensive * defensive_hat
        + config.weight_collision * collision_hat
    )


def score_vehicle(
    subject: VehicleState,
    neighbors: Sequence[VehicleState],
    config: RewardConfig,
    ring_length: Optional[float] = None,
) -> RewardBreakdown:
    """All reward components plus the loss for one vehicle at one step."""
    r_s = speed_reward(subject.speed, config)
    r_c = collision_reward(subject.crashed, config)
    r_d = defensive_reward(subject, neighbors, config, ring_length)
    return RewardBreakdown(
        r_speed=r_s,
        r_collision=r_c,
        r_defensive=r_d,
        loss=step_loss(r_s, r_c, r_d, config),
    )
