"""Engine selection, the simulate() entry point, and report assembly.

The compiled engine is used when importable; set KVOVERLAP_ENGINE=py or =c
to force one side (forcing "c" without the extension built is an error).
"""

from __future__ import annotations

import logging
import math
import os

import numpy as np

from ..hwprofile import HardwareProfile, compute_time, transfer_time
from ._engine_py import DependencyCycleError, run_schedule as _run_py
from .tasks import (
    RESOURCE_INDEX,
    Resource,
    SimReport,
    TaskGraph,
    Timeline,
    TimelineEntry,
)

try:
    from ._engine import run_schedule as _run_c
except ImportError:  # extension not built
    _run_c = None

log = logging.getLogger(__name__)

_ENGINE_ENV = "KVOVERLAP_ENGINE"

__all__ = [
    "DependencyCycleError",
    "active_engine",
    "available_engines",
    "run_schedule",
    "simulate",
    "task_durations",
]


def available_engines() -> tuple[str, ...]:
    return ("py", "c") if _run_c is not None else ("py",)


def active_engine() -> str:
    """Engine simulate() will use right now, honoring the env override."""
    forced = os.environ.get(_ENGINE_ENV, "").strip().lower()
    if forced:
        if forced not in ("py", "c"):
            raise ValueError(f"{_ENGINE_ENV} must be 'py' or 'c', got {forced!r}")
        if forced == "c" and _run_c is None:
            raise RuntimeError("KVOVERLAP_ENGINE=c but the compiled engine is not built")
        return forced
    return "c" if _run_c is not None else "py"


def run_schedule(resource, duration, priority, dep_indptr, dep_indices,
                 n_resources: int, engine: str | None = None):
    """Dispatch to the selected engine; identical results either way."""
    name = engine if engine is not None else active_engine()
    if name == "c":
        if _run_c is None:
            raise RuntimeError("compiled engine requested but not built")
        n = len(resource)
        # packed ready-queue keys must fit int64
        if n > 0 and int(np.max(priority)) > (2**62) // max(n, 1):
            log.debug("priority range too wide for packed keys; using py engine")
            return _run_py(resource, duration, priority, dep_indptr, dep_indices, n_resources)
        return _run_c(resource, duration, priority, dep_indptr, dep_indices, n_resources)
    if name == "py":
        return _run_py(resource, duration, priority, dep_indptr, dep_indices, n_resources)
    raise ValueError(f"unknown engine {name!r}")


def task_durations(graph: TaskGraph, profile: HardwareProfile) -> np.ndarray:
    """Seconds per task under the profile (bytes for transfers, FLOPs for gpu)."""
    out = np.empty(len(graph), dtype=np.float64)
    for task in graph.tasks:
        if task.resource is Resource.GPU:
            out[task.id] = compute_time(profile, task.cost)
        elif task.resource is Resource.H2D:
            out[task.id] = transfer_time(profile, task.cost, "h2d")
        else:
            out[task.id] = transfer_time(profile, task.cost, "d2h")
    return out


def _dep_csr(graph: TaskGraph) -> tuple[np.ndarray, np.ndarray]:
    indptr = np.zeros(len(graph) + 1, dtype=np.int64)
    for task in graph.tasks:
        indptr[task.id + 1] = len(task.deps)
    np.cumsum(indptr, out=indptr)
    indices = np.empty(indptr[-1], dtype=np.int64)
    for task in graph.tasks:
        indices[indptr[task.id]:indptr[task.id + 1]] = task.deps
    return indptr, indices


def _check_invariants(graph: TaskGraph, start: np.ndarray, end: np.ndarray) -> None:
    by_resource: dict[Resource, list[int]] = {}
    for task in graph.tasks:
        by_resource.setdefault(task.resource, []).append(task.id)
    for ids in by_resource.values():
        ids.sort(key=lambda i: (start[i], i))
        for a, b in zip(ids, ids[1:]):
            if end[a] > start[b]:
                raise AssertionError(
                    f"resource overlap: task {a} ends {end[a]!r} after task {b} starts {start[b]!r}"
                )
    for task in graph.tasks:
        for d in task.deps:
            if start[task.id] < end[d]:
                raise AssertionError(
                    f"dependency violated: task {task.id} starts before dep {d} ends"
                )


def _utilization_bins(
    entries: list[tuple[float, float]], makespan: float, bins: int
) -> tuple[tuple[float, float], ...]:
    if makespan <= 0 or not math.isfinite(makespan) or bins <= 0:
        return ()
    width = makespan / bins
    busy = [0.0] * bins
    for s, e in entries:
        lo = min(bins - 1, int(s / width))
        hi = min(bins - 1, int(e / width)) if e > s else lo
        for idx in range(lo, hi + 1):
            left = idx * width
            busy[idx] += max(0.0, min(e, left + width) - max(s, left))
    return tuple(
        ((idx + 0.5) * width, min(1.0, busy[idx] / width)) for idx in range(bins)
    )


def simulate(
    graph: TaskGraph,
    profile: HardwareProfile,
    *,
    engine: str | None = None,
    bins: int = 100,
    check: bool = True,
) -> tuple[Timeline, SimReport]:
    """Run the task graph against a profile; returns (Timeline, SimReport).

    ``check`` re-validates resource exclusivity and dependency respect on
    the produced schedule (cheap at desk scale, so on by default).
    """
    n = len(graph)
    resource = np.empty(n, dtype=np.int64)
    priority = np.empty(n, dtype=np.int64)
    for task in graph.tasks:
        resource[task.id] = RESOURCE_INDEX[task.resource]
        priority[task.id] = task.priority
    duration = task_durations(graph, profile)
    indptr, indices = _dep_csr(graph)
    start, end = run_schedule(
        resource, duration, priority, indptr, indices, len(RESOURCE_INDEX), engine=engine
    )
    if check and n:
        _check_invariants(graph, start, end)

    makespan = float(end.max()) if n else 0.0
    entries = tuple(
        TimelineEntry(
            task_id=task.id,
            kind=task.kind.value,
            resource=task.resource.value,
            start=float(start[task.id]),
            end=float(end[task.id]),
            name=task.name,
        )
        for task in graph.tasks
    )
    timeline = Timeline(entries=entries, makespan=makespan)

    finite = makespan > 0 and math.isfinite(makespan)
    busy_by_kind: dict[str, float] = {}
    gpu_busy = 0.0
    gpu_spans: list[tuple[float, float]] = []
    for task in graph.tasks:
        d = float(duration[task.id])
        busy_by_kind[task.kind.value] = busy_by_kind.get(task.kind.value, 0.0) + d
        if task.resource is Resource.GPU:
            gpu_busy += d
            gpu_spans.append((float(start[task.id]), float(end[task.id])))

    report = SimReport(
        makespan=makespan,
        decode_throughput=graph.tokens_generated / makespan if finite else 0.0,
        gpu_utilization=min(1.0, gpu_busy / makespan) if finite else 0.0,
        breakdown=(
            {k: min(1.0, v / makespan) for k, v in sorted(busy_by_kind.items())}
            if finite
            else {}
        ),
        utilization_timeline=_utilization_bins(gpu_spans, makespan, bins) if finite else (),
        peak_gpu_bytes=graph.peak_gpu_bytes,
    )
    return timeline, report
