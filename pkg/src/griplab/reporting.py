"""File emission for experiment runs.

Every run writes a manifest first, then a config snapshot, per-trial tick
traces, the trials-by-rollouts cost matrix, per-rollout median intervention
counts, and a plain-text summary.  All CSV content is a pure function of
(config, seeds), so reruns reproduce the files byte for byte; wall-clock
metadata lives only in the manifest.
"""

from __future__ import annotations

import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .configio import config_to_text
from .harness import ComparisonRow, ExperimentConfig, ExperimentReport, RolloutTrace, trial_seeds

__all__ = [
    "write_manifest",
    "write_report",
    "write_comparison",
    "trace_csv_text",
    "cost_matrix_csv_text",
    "comparison_csv_text",
    "summary_text",
]


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form; empty for missing entries."""
    if isinstance(x, float) and np.isnan(x):
        return ""
    return repr(float(x))


def write_manifest(out_dir: Path, config_path: str, master_seed: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.txt"
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    path.write_text(
        f"tool = griplab {__version__}\n"
        f"config = {config_path}\n"
        f"master_seed = {master_seed}\n"
        f"output = {out_dir}\n"
        f"started = {stamp}\n"
    )
    return path


def trace_csv_text(trace: RolloutTrace) -> str:
    header = (
        "tick,yaw,f1,f2,f3,up1,up2,up3,ur1,ur2,ur3,u1,u2,u3,"
        "alpha,reactive_energy,cost,event"
    )
    rows = [header]
    last = len(trace) - 1
    for t in range(len(trace)):
        event = trace.event.value if t == last else "none"
        cells = (
            [str(t)]
            + [_fmt(v) for v in trace.states[t]]
            + [_fmt(v) for v in trace.u_policy[t]]
            + [_fmt(v) for v in trace.u_reactive[t]]
            + [_fmt(v) for v in trace.u_applied[t]]
            + [_fmt(trace.alpha[t]), _fmt(trace.reactive_energy[t]), _fmt(trace.cost[t]), event]
        )
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def cost_matrix_csv_text(report: ExperimentReport) -> str:
    n_r = report.config.max_rollouts
    header = "trial," + ",".join(f"r{r}" for r in range(1, n_r + 1)) + ",verdict"
    rows = [header]
    for i, outcome in enumerate(report.outcomes, start=1):
        cells = [str(i)] + [_fmt(v) for v in report.cost_matrix[i - 1]] + [outcome.verdict.value]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def interventions_csv_text(report: ExperimentReport) -> str:
    rows = ["rollout,median_interventions"]
    for r, v in enumerate(report.median_interventions, start=1):
        rows.append(f"{r},{_fmt(v)}")
    return "\n".join(rows) + "\n"


def summary_text(report: ExperimentReport) -> str:
    n = len(report.outcomes)
    success = round(report.success_rate * n)
    slip = round(report.slip_rate * n)
    lines = [
        f"condition = {report.config.condition.value}",
        f"task = {report.config.task}",
        f"trials = {n}",
        f"success = {success}/{n}",
        f"slip = {slip}/{n}",
        f"success_rate = {_fmt(report.success_rate)}",
        f"slip_rate = {_fmt(report.slip_rate)}",
    ]
    for i, outcome in enumerate(report.outcomes, start=1):
        lines.append(
            f"trial {i}: verdict={outcome.verdict.value} rollouts={outcome.rollouts}"
            + (f" diagnostic={outcome.diagnostic}" if outcome.diagnostic else "")
        )
    return "\n".join(lines) + "\n"


def write_report(out_dir: Path, report: ExperimentReport, config_path: str = "<api>") -> None:
    """Write the full run directory for one experiment."""
    out_dir = Path(out_dir)
    write_manifest(out_dir, config_path, report.config.master_seed)
    (out_dir / "config.cfg").write_text(config_to_text(report.config))
    (out_dir / "cost_matrix.csv").write_text(cost_matrix_csv_text(report))
    (out_dir / "interventions.csv").write_text(interventions_csv_text(report))
    (out_dir / "summary.txt").write_text(summary_text(report))
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    seeds = trial_seeds(report.config)
    for i, outcome in enumerate(report.outcomes, start=1):
        for r, trace in enumerate(outcome.traces, start=1):
            name = f"trial_{i:02d}_rollout_{r:02d}.csv"
            (trace_dir / name).write_text(trace_csv_text(trace))
        (trace_dir / f"trial_{i:02d}_seed.txt").write_text(f"{seeds[i - 1]}\n")


def comparison_csv_text(rows: list[ComparisonRow]) -> str:
    lines = ["condition,success_rate,slip_rate"]
    for row in rows:
        lines.append(f"{row.condition.value},{_fmt(row.success_rate)},{_fmt(row.slip_rate)}")
    return "\n".join(lines) + "\n"


def write_comparison(out_dir: Path, rows: list[ComparisonRow]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "comparison.csv"
    path.write_text(comparison_csv_text(rows))
    return path
