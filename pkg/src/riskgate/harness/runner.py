"""Seeded batch execution of worlds, with optional gatekeeper control.

Each world runs to termination or the step horizon. World ``i`` is seeded
``base_seed + i`` and executed independently, so batches parallelize over a
process pool with results collected in world order; the output is identical
for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..gatekeeper import (
    GatekeeperMode,
    GatekeeperState,
    apply_transition,
    decide,
    estimate_cre,
    neighborhood_average,
)
from ..world import PlacementError, init_world, step
from .config import ExperimentConfig


class BatchError(RuntimeError):
    """A world in the batch failed; the message carries the seed."""


@dataclass
class RunRecord:
    """Realized series of one world run, truncated at termination.

    Per-step series are means over all egos. ``tracked_crash`` is the
    cumulative indicator that a tracked ego has crashed at or before the
    step. Risk series are sampled at the evaluation cadence only.
    """

    world_index: int
    seed: int
    termination_reason: Optional[str]
    termination_step: Optional[int]
    r_speed: list[float] = field(default_factory=list)
    r_defensive: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    defensive_fraction: list[float] = field(default_factory=list)
    tracked_crash: list[bool] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    risk: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    n_gk_evaluations: int = 0
    trajectory: Optional[list[dict[str, Any]]] = None
    risk_log: Optional[list[dict[str, Any]]] = None

    @property
    def n_steps_completed(self) -> int:
        return len(self.loss)

    def to_dict(self) -> dict[str, Any]:
        return {
            "world_index": self.world_index,
            "seed": self.seed,
            "termination_reason": self.termination_reason,
            "termination_step": self.termination_step,
            "r_speed": self.r_speed,
            "r_defensive": self.r_defensive,
            "loss": self.loss,
            "defensive_fraction": self.defensive_fraction,
            "tracked_crash": self.tracked_crash,
            "eval_steps": self.eval_steps,
            "risk": self.risk,
            "energy": self.energy,
            "n_gk_evaluations": self.n_gk_evaluations,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        return cls(
            world_index=data["world_index"],
            seed=data["seed"],
            termination_reason=data["termination_reason"],
            termination_step=data["termination_step"],
            r_speed=list(data["r_speed"]),
            r_defensive=list(data["r_defensive"]),
            loss=list(data["loss"]),
            defensive_fraction=list(data["defensive_fraction"]),
            tracked_crash=[bool(x) for x in data["tracked_crash"]],
            eval_steps=list(data["eval_steps"]),
            risk=list(data["risk"]),
            energy=list(data["energy"]),
            n_gk_evaluations=data["n_gk_evaluations"],
        )


def run_world(
    config: ExperimentConfig,
    world_index: int,
    dump_trajectories: bool = False,
    dump_risk: bool = False,
) -> RunRecord:
    """Execute one seeded world to termination or the horizon."""
    seed = config.base_seed + world_index
    try:
        world = init_world(config.world_config(), seed)
    except PlacementError as exc:
        raise BatchError(f"world {world_index} (seed {seed}) failed placement: {exc}") from exc

    record = RunRecord(world_index=world_index, seed=seed,
                       termination_reason=None, termination_step=None)
    if dump_trajectories:
        record.trajectory = []
    if dump_risk:
        record.risk_log = []

    online_ids = config.online_ids
    evaluating = config.mode in ("online", "observe")
    controlling = config.mode == "online"
    ego_ids = [int(i) for i in world.ego_ids]
    states: dict[int, GatekeeperState] = {
        vid: GatekeeperState(
            vehicle_id=vid,
            mode=GatekeeperMode.HOTSHOT,
            hotshot_params=config.hotshot_params,
            defensive_params=config.defensive_params,
        )
        for vid in online_ids
    }
    baseline_defensive = (
        config.mode in ("baseline", "observe") and config.baseline_policy == "Defensive"
    )

    def ego_mode(vid: int) -> GatekeeperMode:
        if vid in states:
            return states[vid].mode
        return GatekeeperMode.DEFENSIVE if baseline_defensive else GatekeeperMode.HOTSHOT

    tracked_crashed = False
    for t in range(config.n_steps):
        if evaluating and t % config.mc.cadence == 0:
            risks = estimate_cre(
                world, config.mc, config.rewards,
                noise_exempt_ids=online_ids if controlling else (),
            )
            monitored = list(online_ids) if controlling else ego_ids
            averaged = neighborhood_average(
                {vid: risks[vid] for vid in monitored},
                world, config.rewards.neighbor_radius,
            )
            record.n_gk_evaluations += 1
            record.eval_steps.append(t)
            record.risk.append(float(np.mean([averaged[v] for v in monitored])))
            record.energy.append(float(np.mean([risks[v].step_energy for v in monitored])))
            if record.risk_log is not None:
                for vid in monitored:
                    record.risk_log.append({
                        "step": t,
                        "id": vid,
                        "cre": risks[vid].cre,
                        "averaged_cre": averaged[vid],
                        "mode": ego_mode(vid).value,
                        "sample_std": risks[vid].sample_std,
                    })
            if controlling:
                for vid in online_ids:
                    states[vid] = decide(states[vid], averaged[vid], config.thresholds)

        for vid in online_ids:
            if states[vid].transition is not None:
                states[vid], vehicle = apply_transition(states[vid], world.vehicle(vid))
                world.set_vehicle_params(vid, vehicle.active_params)

        outcome = step(world, config.rewards)
        breakdowns = [outcome.per_ego_rewards[v] for v in ego_ids]
        record.r_speed.append(float(np.mean([b.r_speed for b in breakdowns])))
        record.r_defensive.append(float(np.mean([b.r_defensive for b in breakdowns])))
        record.loss.append(float(np.mean([b.loss for b in breakdowns])))
        record.defensive_fraction.append(
            sum(1 for v in ego_ids if ego_mode(v) is GatekeeperMode.DEFENSIVE)
            / len(ego_ids)
        )
        tracked_crashed = tracked_crashed or bool(
            world.crashed[world.tracked_ego_ids].any()
        )
        record.tracked_crash.append(tracked_crashed)

        if record.trajectory is not None:
            record.trajectory.append({
                "step": world.step,
                "vehicles": [
                    {
                        "id": int(i),
                        "lane": int(world.lanes[i]),
                        "s": float(world.positions[i]),
                        "v": float(world.speeds[i]),
                        "crashed": bool(world.crashed[i]),
                        "mode": ego_mode(int(i)).value if int(i) in set(ego_ids) else "Alter",
                    }
                    for i in range(world.n_vehicles)
                ],
            })

        if outcome.terminated is not None:
            record.termination_reason = outcome.terminated.value
            record.termination_step = record.n_steps_completed - 1
            break
    return record


def _run_world_job(args: tuple) -> RunRecord:
    config, index, dump_trajectories, dump_risk = args
    return run_world(config, index, dump_trajectories, dump_risk)


def run_batch(
    config: ExperimentConfig,
    workers: int = 1,
    dump_trajectories: bool = False,
    dump_risk: bool = False,
) -> list[RunRecord]:
    """Run every world of the batch; results are ordered by world index.

    The outcome is a pure function of the configuration: worker count only
    affects wall-clock time.
    """
    jobs = [
        (config, i, dump_trajectories, dump_risk) for i in range(config.n_worlds)
    ]
    if workers <= 1:
        return [_run_world_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, config.n_worlds // (workers * 4))
        return list(pool.map(_run_world_job, jobs, chunksize=chunk))
