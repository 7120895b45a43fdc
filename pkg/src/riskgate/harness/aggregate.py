"""Cross-world aggregation and deterministic file emission.

Per-step statistics are computed over the worlds still alive at that step
(terminated worlds stop contributing; the per-step sample size is emitted
so consumers can reweight). The crash curve is the cumulative fraction of
all worlds whose run ended in a tracked-ego crash at or before each step.
Confidence intervals use the normal approximation with z = 1.645 for a 90%
band; a percentile bootstrap is available for small batches.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .runner import RunRecord

Z90 = 1.645

# Emission order of the panel quantities.
QUANTITY_ORDER = ("R_S", "R_D", "Loss", "Crashed", "Fraction Defensive",
                  "E[Energy]", "Risk")


@dataclass
class SeriesStats:
    """Per-step mean with a 90% band and the per-step sample size."""

    steps: np.ndarray
    mean: np.ndarray
    lo90: np.ndarray
    hi90: np.ndarray
    n: np.ndarray


@dataclass
class AggregateStats:
    quantities: dict[str, SeriesStats]
    headline: dict[str, float]

    @property
    def crash_curve(self) -> SeriesStats:
        return self.quantities["Crashed"]


def _stat_over_steps(
    series: list[Sequence[float]], bootstrap: Optional[int] = None,
    base_rng: Optional[np.random.Generator] = None,
) -> SeriesStats:
    """Mean and 90% band per step over however many series are still alive."""
    horizon = max(len(s) for s in series)
    steps, means, los, his, ns = [], [], [], [], []
    for t in range(horizon):
        alive = [s[t] for s in series if len(s) > t]
        if not alive:
            continue
        values = np.asarray(alive, dtype=np.float64)
        m = float(values.mean())
        n = values.size
        if bootstrap and n > 1:
            rng = base_rng if base_rng is not None else np.random.default_rng(0)
            draws = rng.choice(values, size=(bootstrap, n), replace=True).mean(axis=1)
            lo, hi = (float(np.percentile(draws, 5)), float(np.percentile(draws, 95)))
            lo, hi = min(lo, m), max(hi, m)
        else:
            half = Z90 * float(values.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
            lo, hi = m - half, m + half
        steps.append(t)
        means.append(m)
        los.append(lo)
        his.append(hi)
        ns.append(n)
    return SeriesStats(
        steps=np.asarray(steps, dtype=np.int64),
        mean=np.asarray(means), lo90=np.asarray(los), hi90=np.asarray(his),
        n=np.asarray(ns, dtype=np.int64),
    )


def _crash_curve(records: list[RunRecord]) -> SeriesStats:
    horizon = max(r.n_steps_completed for r in records)
    n_worlds = len(records)
    crash_steps = [
        r.termination_step
        for r in records
        if r.termination_reason == "TrackedCrash" and r.termination_step is not None
    ]
    steps = np.arange(horizon, dtype=np.int64)
    counts = np.zeros(horizon)
    for s in crash_steps:
        counts[min(s, horizon - 1):] += 1.0
    p = counts / n_worlds
    half = Z90 * np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / n_worlds)
    return SeriesStats(
        steps=steps,
        mean=p,
        lo90=np.clip(p - half, 0.0, 1.0),
        hi90=np.clip(p + half, 0.0, 1.0),
        n=np.full(horizon, n_worlds, dtype=np.int64),
    )


def _eval_series(records: list[RunRecord], attr: str) -> Optional[SeriesStats]:
    all_steps = sorted({s for r in records for s in r.eval_steps})
    if not all_steps:
        return None
    steps, means, los, his, ns = [], [], [], [], []
    for s in all_steps:
        values = []
        for r in records:
            try:
                k = r.eval_steps.index(s)
            except ValueError:
                continue
            values.append(getattr(r, attr)[k])
        arr = np.asarray(values, dtype=np.float64)
        m = float(arr.mean())
        half = Z90 * float(arr.std(ddof=1)) / np.sqrt(arr.size) if arr.size > 1 else 0.0
        steps.append(s)
        means.append(m)
        los.append(m - half)
        his.append(m + half)
        ns.append(arr.size)
    return SeriesStats(
        steps=np.asarray(steps, dtype=np.int64),
        mean=np.asarray(means), lo90=np.asarray(los), hi90=np.asarray(his),
        n=np.asarray(ns, dtype=np.int64),
    )


def aggregate(records: list[RunRecord], bootstrap: Optional[int] = None) -> AggregateStats:
    """Per-step means, 90% bands, crash curve and headline scalars.

    ``bootstrap`` switches the per-step band of the realized series to a
    seeded percentile bootstrap with that many resamples.
    """
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    rng = np.random.default_rng(0) if bootstrap else None
    quantities: dict[str, SeriesStats] = {
        "R_S": _stat_over_steps([r.r_speed for r in records], bootstrap, rng),
        "R_D": _stat_over_steps([r.r_defensive for r in records], bootstrap, rng),
        "Loss": _stat_over_steps([r.loss for r in records], bootstrap, rng),
        "Crashed": _crash_curve(records),
        "Fraction Defensive": _stat_over_steps(
            [r.defensive_fraction for r in records], bootstrap, rng
        ),
    }
    for name, attr in (("E[Energy]", "energy"), ("Risk", "risk")):
        series = _eval_series(records, attr)
        if series is not None:
            quantities[name] = series

    n = len(records)
    tracked = sum(1 for r in records if r.termination_reason == "TrackedCrash")
    jams = sum(1 for r in records if r.termination_reason == "Jam")
    headline = {
        "n_worlds": float(n),
        "tracked_crash_count": float(tracked),
        "jam_count": float(jams),
        "final_crash_fraction": tracked / n,
        "mean_final_loss": float(np.mean([r.loss[-1] for r in records])),
        "mean_loss": float(np.mean([np.mean(r.loss) for r in records])),
        "mean_defensive_fraction": float(
            np.mean([np.mean(r.defensive_fraction) for r in records])
        ),
        "mean_steps_completed": float(np.mean([r.n_steps_completed for r in records])),
    }
    return AggregateStats(quantities=quantities, headline=headline)


def emit(
    stats: AggregateStats,
    records: list[RunRecord],
    config: ExperimentConfig,
    output_dir: str | Path,
    include_runs: bool = True,
) -> list[Path]:
    """Write summary.json, timeseries.csv and optional per-run artifacts.

    File contents are a pure function of the inputs: reruns on the same
    records produce byte-identical files.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary_path = out / "summary.json"
    summary = {"config": config.to_dict(), "headline": stats.headline}
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    csv_path = out / "timeseries.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "quantity", "mean", "lo90", "hi90", "n"])
        for name in QUANTITY_ORDER:
            if name not in stats.quantities:
                continue
            series = stats.quantities[name]
            for k in range(series.steps.size):
                writer.writerow([
                    int(series.steps[k]), name,
                    repr(float(series.mean[k])),
                    repr(float(series.lo90[k])),
                    repr(float(series.hi90[k])),
                    int(series.n[k]),
                ])
    written.append(csv_path)

    if include_runs:
        runs_path = out / "runs.jsonl"
        with runs_path.open("w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        written.append(runs_path)

    if any(r.trajectory is not None for r in records):
        traj_path = out / "trajectories.jsonl"
        with traj_path.open("w") as fh:
            for record in records:
                for row in record.trajectory or []:
                    fh.write(json.dumps(
                        {"world_index": record.world_index, **row}, sort_keys=True
                    ) + "\n")
        written.append(traj_path)

    if any(r.risk_log is not None for r in records):
        risk_path = out / "risk_log.jsonl"
        with risk_path.open("w") as fh:
            for record in records:
                for row in record.risk_log or []:
                    fh.write(json.dumps(
                        {"world_index": record.world_index, **row}, sort_keys=True
                    ) + "\n")
        written.append(risk_path)
    return written


def load_records(input_dir: str | Path) -> list[RunRecord]:
    """Read per-run records back from a run output directory."""
    path = Path(input_dir) / "runs.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no runs.jsonl in {input_dir}")
    records = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_dict(json.loads(line)))
    return records
