"""Task, timeline and report types for the offload pipeline simulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class TaskKind(str, Enum):
    LOAD_WEIGHT = "load_weight"
    LOAD_CACHE = "load_cache"
    LOAD_ACTIVATION = "load_activation"
    LOAD_ACTIVATION_RECOMPUTE = "load_activation_recompute"
    COMPUTE_RECOMPUTE = "compute_recompute"
    COMPUTE_MHA = "compute_mha"
    COMPUTE_FFN = "compute_ffn"
    STORE_CACHE = "store_cache"
    STORE_ACTIVATION = "store_activation"
    SYNC = "sync"


class Resource(str, Enum):
    H2D = "h2d"
    GPU = "gpu"
    D2H = "d2h"


# trace lanes and engine resource ids share this ordering
RESOURCE_INDEX = {Resource.H2D: 0, Resource.GPU: 1, Resource.D2H: 2}

KIND_RESOURCE = {
    TaskKind.LOAD_WEIGHT: Resource.H2D,
    TaskKind.LOAD_CACHE: Resource.H2D,
    TaskKind.LOAD_ACTIVATION: Resource.H2D,
    TaskKind.LOAD_ACTIVATION_RECOMPUTE: Resource.H2D,
    TaskKind.COMPUTE_RECOMPUTE: Resource.GPU,
    TaskKind.COMPUTE_MHA: Resource.GPU,
    TaskKind.COMPUTE_FFN: Resource.GPU,
    TaskKind.STORE_CACHE: Resource.D2H,
    TaskKind.STORE_ACTIVATION: Resource.D2H,
    TaskKind.SYNC: Resource.GPU,
}


@dataclass(frozen=True)
class Task:
    """One unit of work bound to a single resource.

    ``cost`` is bytes for transfers and FLOPs for compute; durations are only
    assigned at simulation time against a hardware profile.  ``priority`` is
    the queue key (smaller runs first among ready tasks on one resource).
    ``part`` distinguishes subdivisions of a kind, e.g. the two halves of a
    fine-granularity weight load.
    """

    id: int
    kind: TaskKind
    resource: Resource
    cost: float
    deps: tuple[int, ...]
    step: int
    layer: int
    batch: int
    priority: int
    part: str = ""

    def __post_init__(self) -> None:
        if KIND_RESOURCE[self.kind] is not self.resource:
            raise ValueError(f"{self.kind.value} cannot run on {self.resource.value}")
        if self.cost < 0:
            raise ValueError("cost must be nonnegative")

    @property
    def name(self) -> str:
        bits = [self.kind.value]
        if self.part:
            bits.append(self.part)
        bits.append(f"i{self.step}")
        bits.append(f"j{self.layer}")
        if self.batch >= 0:
            bits.append(f"k{self.batch}")
        return " ".join(bits)


@dataclass(frozen=True)
class TaskGraph:
    """Immutable DAG of tasks plus workload-level bookkeeping."""

    tasks: tuple[Task, ...]
    tokens_generated: int
    peak_gpu_bytes: float

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class TimelineEntry:
    task_id: int
    kind: str
    resource: str
    start: float
    end: float
    name: str


@dataclass(frozen=True)
class Timeline:
    entries: tuple[TimelineEntry, ...]
    makespan: float


@dataclass(frozen=True)
class SimReport:
    """Aggregates computed from one simulated timeline."""

    makespan: float
    decode_throughput: float
    gpu_utilization: float
    breakdown: dict[str, float] = field(default_factory=dict)
    utilization_timeline: tuple[tuple[float, float], ...] = ()
    peak_gpu_bytes: float = 0.0
