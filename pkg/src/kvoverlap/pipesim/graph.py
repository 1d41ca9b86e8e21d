"""Task-graph construction for the offloaded decode pipelines.

One "unit" is a (step i, layer j, batch k) triple.  Row schedules walk units
batch-major (finish a batch's whole generation before the next batch starts);
column schedules walk layer-major (one layer across the batch group, then the
next layer), which is what makes weight offloading amortizable.

Per unit the builder emits up to eight tasks:

    h2d: weight load (when offloaded; fine granularity splits it into a
         K/V half and a Q/O half), recompute-activation load (column only),
         remaining-KV load, token-activation load (column only)
    gpu: prefix recompute, MHA, FFN
    d2h: appended-KV write-back, token-activation store (column only)

Row mode keeps layer inputs GPU-resident, so no activation traffic is
emitted there; its recompute prefix reads history already on the device.

Ordering is expressed two ways.  Data dependencies carry correctness: MHA
waits on the merged cache (recompute AND kv load) and on its weights, the
recompute waits on its staged activations and the K/V weights, stores wait
on the compute that produces them, and GPU tasks are chained in program
order (one sequential compute stream).  Queue priorities carry preference:
within the h2d channel a unit issues weightsKV < recompute-activations <
weightsQO < KV < token activations, and earlier units outrank later ones.
Double buffering is modeled as a dependency of each staged load on the
consumer of the load two positions earlier in its own category, and of each
weight-group load on the last consumer two groups back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..costmodel import (
    ModelSpec,
    WorkloadSpec,
    activation_bytes,
    decode_step_flops,
    kv_remainder_bytes,
    mha_matrix_bytes,
    mha_weight_bytes,
    recompute_flops,
    token_activation_bytes,
    token_kv_store_bytes,
)
from ..hwprofile import HardwareProfile
from ..scheduler import SCHEDULE_MODES, SplitPlan
from .tasks import KIND_RESOURCE, Task, TaskGraph, TaskKind

log = logging.getLogger(__name__)

GRANULARITIES = ("coarse", "fine")

# priority classes, per resource queue (smaller first within one unit)
_CLS_WEIGHT_KV = 0
_CLS_ACT_RECOMPUTE = 1
_CLS_WEIGHT_QO = 2
_CLS_KV = 3
_CLS_TOKEN_ACT = 4
_CLS_RECOMPUTE = 0
_CLS_MHA = 1
_CLS_FFN = 2
_CLS_STORE_KV = 0
_CLS_STORE_ACT = 1
_STRIDE = 8


class GpuMemoryBudgetError(RuntimeError):
    """Estimated peak GPU residency exceeds the configured budget."""


@dataclass(frozen=True)
class Policy:
    """Which pipeline variant to build."""

    schedule: str = "row"
    recompute: bool = True
    granularity: str = "coarse"
    weights_resident: bool = True

    def __post_init__(self) -> None:
        if self.schedule not in SCHEDULE_MODES:
            raise ValueError(f"schedule must be one of {SCHEDULE_MODES}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")


class _Builder:
    def __init__(self) -> None:
        self.kinds: list[TaskKind] = []
        self.costs: list[float] = []
        self.deps: list[tuple[int, ...]] = []
        self.tags: list[tuple[int, int, int]] = []
        self.priorities: list[int] = []
        self.parts: list[str] = []

    def add(self, kind, cost, deps, step, layer, batch, priority, part="") -> int:
        tid = len(self.kinds)
        self.kinds.append(kind)
        self.costs.append(cost)
        # stable de-dup; a dep may arrive via data and chain edges at once
        self.deps.append(tuple(dict.fromkeys(d for d in deps if d is not None)))
        self.tags.append((step, layer, batch))
        self.priorities.append(priority)
        self.parts.append(part)
        return tid

    def tasks(self) -> tuple[Task, ...]:
        return tuple(
            Task(
                id=i,
                kind=self.kinds[i],
                resource=KIND_RESOURCE[self.kinds[i]],
                cost=self.costs[i],
                deps=self.deps[i],
                step=self.tags[i][0],
                layer=self.tags[i][1],
                batch=self.tags[i][2],
                priority=self.priorities[i],
                part=self.parts[i],
            )
            for i in range(len(self.kinds))
        )


def _unit_order(wl: WorkloadSpec, num_layers: int, schedule: str):
    steps = range(1, wl.gen_len + 1)
    layers = range(1, num_layers + 1)
    batches = range(wl.num_batches)
    if schedule == "row":
        return [(i, j, k) for k in batches for i in steps for j in layers]
    return [(i, j, k) for i in steps for j in layers for k in batches]


def _check_plan(wl: WorkloadSpec, plan: SplitPlan, policy: Policy) -> None:
    if plan.mode != policy.schedule:
        raise ValueError(f"plan mode {plan.mode!r} != policy schedule {policy.schedule!r}")
    if len(plan.decisions) != wl.gen_len:
        raise ValueError("plan does not cover gen_len steps")
    for step, d in enumerate(plan.decisions, start=1):
        if d.step != step or d.seq_len != wl.prompt_len + step:
            raise ValueError(f"plan step {step} inconsistent with workload")
        if not 0 <= d.recompute_len <= d.seq_len:
            raise ValueError(f"plan step {step}: split out of range")


def estimate_peak_gpu_bytes(
    spec: ModelSpec, wl: WorkloadSpec, plan: SplitPlan, policy: Policy
) -> float:
    """Peak GPU residency estimate: weights, staging buffers, retained prefixes.

    Counted terms: resident weights (all layers, or two layer buffers when
    streaming), two staging buffers each for in-flight KV and activation
    loads, and in column mode the recompute prefixes of the whole batch
    group, which stay resident until their generation finishes.
    """
    splits = [d.recompute_len if policy.recompute else 0 for d in plan.decisions]
    if policy.weights_resident:
        total = float(spec.num_layers * mha_weight_bytes(spec))
    else:
        total = float(2 * mha_weight_bytes(spec))
    total += 2 * max(
        kv_remainder_bytes(spec, wl, wl.prompt_len + step, l)
        for step, l in enumerate(splits, start=1)
    )
    max_act = max(activation_bytes(spec, wl, l) for l in splits)
    if policy.schedule == "column":
        total += 2 * max_act
        total += 2 * token_activation_bytes(spec, wl)
        total += wl.num_batches * max_act
    return total


def build_task_graph(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    plan: SplitPlan,
    policy: Policy,
    gpu_mem_budget: float | None = None,
) -> TaskGraph:
    """Emit the decode task DAG for one policy.

    ``profile`` does not shape the graph (durations are assigned by
    ``simulate``); it is accepted so call sites carry one config bundle.
    Raises GpuMemoryBudgetError when the peak estimate exceeds the budget.
    """
    del profile
    _check_plan(wl, plan, policy)
    peak = estimate_peak_gpu_bytes(spec, wl, plan, policy)
    if gpu_mem_budget is not None and peak > gpu_mem_budget:
        raise GpuMemoryBudgetError(
            f"estimated peak {peak:.0f} B exceeds budget {gpu_mem_budget:.0f} B"
        )

    n_layers = spec.num_layers
    column = policy.schedule == "column"
    splits = [d.recompute_len if policy.recompute else 0 for d in plan.decisions]
    units = _unit_order(wl, n_layers, policy.schedule)

    flops = {
        step: decode_step_flops(spec, wl, wl.prompt_len + step)
        for step in range(1, wl.gen_len + 1)
    }
    w_half = float(2 * mha_matrix_bytes(spec))
    w_full = float(mha_weight_bytes(spec))
    tok_act = float(token_activation_bytes(spec, wl))
    tok_kv = float(token_kv_store_bytes(spec, wl))

    b = _Builder()
    last_gpu: int | None = None

    # double-buffer bookkeeping: per category, consumer of each emitted load
    emits = {"kv": 0, "act": 0, "tok": 0}
    consumers: dict[str, list[int]] = {"kv": [], "act": [], "tok": []}

    def stage_dep(cat: str) -> int | None:
        e = emits[cat]
        return consumers[cat][e - 2] if e >= 2 else None

    # weight groups in first-use order; release = last MHA consuming the group
    group_keys: dict[tuple, int] = {}
    group_ids: list[tuple[int, int]] = []  # (kv-half id, qo-half id); equal if coarse
    group_release: list[int | None] = []

    cf_ids: dict[tuple[int, int, int], int] = {}
    sc_ids: dict[tuple[int, int, int], int] = {}
    sa_ids: dict[tuple[int, int, int], int] = {}

    for t, (i, j, k) in enumerate(units):
        seq_len = wl.prompt_len + i
        split = splits[i - 1]
        base = t * _STRIDE

        w_kv_id = w_qo_id = None
        group_idx = None
        if not policy.weights_resident:
            key = (i, j) if column else (i, j, k)
            group_idx = group_keys.get(key)
            if group_idx is None:
                group_idx = len(group_ids)
                group_keys[key] = group_idx
                wdep = group_release[group_idx - 2] if group_idx >= 2 else None
                if policy.granularity == "fine":
                    w_kv_id = b.add(
                        TaskKind.LOAD_WEIGHT, w_half, [wdep], i, j, k if not column else -1,
                        base + _CLS_WEIGHT_KV, part="kv",
                    )
                    w_qo_id = b.add(
                        TaskKind.LOAD_WEIGHT, w_half, [wdep], i, j, k if not column else -1,
                        base + _CLS_WEIGHT_QO, part="qo",
                    )
                else:
                    w_kv_id = b.add(
                        TaskKind.LOAD_WEIGHT, w_full, [wdep], i, j, k if not column else -1,
                        base + _CLS_WEIGHT_KV,
                    )
                    w_qo_id = w_kv_id
                group_ids.append((w_kv_id, w_qo_id))
                group_release.append(None)
            else:
                w_kv_id, w_qo_id = group_ids[group_idx]

        lar_id = None
        if column and split > 0:
            deps = [stage_dep("act")]
            if split > wl.prompt_len:
                # newest recomputed position was produced during decode
                m = split - wl.prompt_len
                if j >= 2:
                    deps.append(sa_ids[(m, j - 1, k)])
                elif m >= 2:
                    deps.append(cf_ids[(m - 1, n_layers, k)])
            lar_id = b.add(
                TaskKind.LOAD_ACTIVATION_RECOMPUTE,
                float(activation_bytes(spec, wl, split)),
                deps, i, j, k, base + _CLS_ACT_RECOMPUTE,
            )
            emits["act"] += 1

        lc_id = None
        if split < seq_len:
            deps = [stage_dep("kv")]
            if i >= 2:
                deps.append(sc_ids[(i - 1, j, k)])
            lc_id = b.add(
                TaskKind.LOAD_CACHE,
                kv_remainder_bytes(spec, wl, seq_len, split),
                deps, i, j, k, base + _CLS_KV,
            )
            emits["kv"] += 1

        la_id = None
        if column:
            deps = [stage_dep("tok")]
            if j >= 2:
                deps.append(sa_ids[(i, j - 1, k)])
            elif i >= 2:
                deps.append(sa_ids[(i - 1, n_layers, k)])
            la_id = b.add(
                TaskKind.LOAD_ACTIVATION, tok_act, deps, i, j, k, base + _CLS_TOKEN_ACT
            )
            emits["tok"] += 1

        cr_id = None
        if split > 0:
            cr_id = b.add(
                TaskKind.COMPUTE_RECOMPUTE,
                float(recompute_flops(spec, wl, split)),
                [lar_id, w_kv_id, last_gpu], i, j, k, base + _CLS_RECOMPUTE,
            )
            last_gpu = cr_id
            if lar_id is not None:
                consumers["act"].append(cr_id)

        cm_id = b.add(
            TaskKind.COMPUTE_MHA,
            float(flops[i].mha),
            [cr_id, lc_id, la_id, w_kv_id, w_qo_id, last_gpu],
            i, j, k, base + _CLS_MHA,
        )
        last_gpu = cm_id
        if lc_id is not None:
            consumers["kv"].append(cm_id)
        if la_id is not None:
            consumers["tok"].append(cm_id)
        if group_idx is not None:
            last_of_group = (k == wl.num_batches - 1) if column else True
            if last_of_group:
                group_release[group_idx] = cm_id

        cf_id = b.add(
            TaskKind.COMPUTE_FFN, float(flops[i].ffn), [cm_id], i, j, k, base + _CLS_FFN
        )
        last_gpu = cf_id
        cf_ids[(i, j, k)] = cf_id

        sc_ids[(i, j, k)] = b.add(
            TaskKind.STORE_CACHE, tok_kv, [cm_id], i, j, k, base + _CLS_STORE_KV
        )

        if column:
            sa_ids[(i, j, k)] = b.add(
                TaskKind.STORE_ACTIVATION, tok_act, [cf_id], i, j, k, base + _CLS_STORE_ACT
            )

    tokens = wl.batch_size * wl.num_batches * wl.gen_len
    graph = TaskGraph(tasks=b.tasks(), tokens_generated=tokens, peak_gpu_bytes=peak)
    log.info(
        "built %s graph: %d tasks, %d units, peak %.3e B",
        policy.schedule, len(graph), len(units), peak,
    )
    return graph
