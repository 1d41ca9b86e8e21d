"""Trace/metrics exporters and the policy comparison table."""

from __future__ import annotations

import csv
import json
from typing import Sequence, TextIO

from ..costmodel import ModelSpec, WorkloadSpec
from ..hwprofile import HardwareProfile
from ..scheduler import SplitPlan, constant_plan, plan_generation
from .engine import simulate
from .graph import Policy, build_task_graph
from .tasks import SimReport, Timeline

TRACE_LANES = {"h2d": 0, "gpu": 1, "d2h": 2}

METRICS_COLUMNS = (
    "policy",
    "schedule",
    "granularity",
    "recompute",
    "makespan_s",
    "throughput_tok_s",
    "gpu_util",
    "peak_gpu_bytes",
)


def export_trace(timeline: Timeline) -> list[dict]:
    """Chrome trace-event document: one complete ("X") event per task."""
    return [
        {
            "name": e.name,
            "cat": e.kind,
            "ph": "X",
            "ts": e.start * 1e6,
            "dur": (e.end - e.start) * 1e6,
            "pid": 0,
            "tid": TRACE_LANES[e.resource],
        }
        for e in timeline.entries
    ]


def write_trace(timeline: Timeline, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(export_trace(timeline), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def metrics_row(label: str, policy: Policy, report: SimReport) -> dict:
    return {
        "policy": label,
        "schedule": policy.schedule,
        "granularity": policy.granularity,
        "recompute": "on" if policy.recompute else "off",
        "makespan_s": report.makespan,
        "throughput_tok_s": report.decode_throughput,
        "gpu_util": report.gpu_utilization,
        "peak_gpu_bytes": report.peak_gpu_bytes,
    }


def write_metrics_csv(rows: Sequence[dict], fh: TextIO) -> None:
    """Fixed-schema metrics table; extra row keys are ignored."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in METRICS_COLUMNS])


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def plan_for_policy(
    spec: ModelSpec, wl: WorkloadSpec, profile: HardwareProfile, policy: Policy
) -> SplitPlan:
    """Solved plan when recomputing, all-zero plan for the naive baseline."""
    if policy.recompute:
        return plan_generation(spec, wl, profile, policy.schedule)
    return constant_plan(wl, policy.schedule, 0)


def compare(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    policies: Sequence[tuple[str, Policy]],
    gpu_mem_budget: float | None = None,
    engine: str | None = None,
) -> list[dict]:
    """Simulate each policy on one config; adds speedup vs the first row."""
    if not policies:
        raise ValueError("need at least one policy")
    rows: list[dict] = []
    base = None
    for label, policy in policies:
        plan = plan_for_policy(spec, wl, profile, policy)
        graph = build_task_graph(spec, wl, profile, plan, policy, gpu_mem_budget)
        _, report = simulate(graph, profile, engine=engine)
        row = metrics_row(label, policy, report)
        if base is None:
            base = report.makespan
        row["speedup_vs_first"] = base / report.makespan if report.makespan > 0 else 0.0
        rows.append(row)
    return rows
