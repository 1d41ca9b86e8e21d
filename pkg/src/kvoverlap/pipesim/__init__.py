"""Deterministic discrete-event simulator for offloaded decode pipelines."""

from .engine import (
    DependencyCycleError,
    active_engine,
    available_engines,
    run_schedule,
    simulate,
    task_durations,
)
from .graph import (
    GpuMemoryBudgetError,
    Policy,
    build_task_graph,
    estimate_peak_gpu_bytes,
)
from .tasks import (
    KIND_RESOURCE,
    RESOURCE_INDEX,
    Resource,
    SimReport,
    Task,
    TaskGraph,
    TaskKind,
    Timeline,
    TimelineEntry,
)
from .trace import (
    METRICS_COLUMNS,
    compare,
    export_trace,
    metrics_row,
    plan_for_policy,
    write_metrics_csv,
    write_trace,
)

__all__ = [
    "DependencyCycleError",
    "GpuMemoryBudgetError",
    "KIND_RESOURCE",
    "METRICS_COLUMNS",
    "Policy",
    "RESOURCE_INDEX",
    "Resource",
    "SimReport",
    "Task",
    "TaskGraph",
    "TaskKind",
    "Timeline",
    "TimelineEntry",
    "active_engine",
    "available_engines",
    "build_task_graph",
    "compare",
    "estimate_peak_gpu_bytes",
    "export_trace",
    "metrics_row",
    "plan_for_policy",
    "run_schedule",
    "simulate",
    "task_durations",
    "write_metrics_csv",
    "write_trace",
]
