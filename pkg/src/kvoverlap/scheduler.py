"""Split planning: how many KV positions to rebuild on-GPU per decode step.

For a cache of length s', rebuilding positions [0, l) costs GPU time while
the rest of the cache transfers concurrently, so the per-layer critical path
is

    column schedule:  t(l) = t_act(l) + max(t_recompute(l), t_kv(s' - l))
    row schedule:     t(l) =            max(t_recompute(l), t_kv(s' - l))

(row keeps layer inputs GPU-resident, so nothing is staged up front).  Both
objectives are piecewise linear in l with a single interior kink where the
recompute and transfer arms meet, so the integer minimum lies in {0,
floor(l*), ceil(l*), s'} with l* the continuous crossover.  ``solve_split``
evaluates exactly those candidates; ``scan_split`` is the brute-force oracle
the solver must agree with, value and argmin (ties break to the smallest l).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .costmodel import (
    ModelSpec,
    WorkloadSpec,
    activation_bytes,
    kv_element_bytes,
    kv_remainder_bytes,
    recompute_flops,
)
from .hwprofile import HardwareProfile, compute_time, transfer_time

SCHEDULE_MODES = ("row", "column")


@dataclass(frozen=True)
class LayerTime:
    """Per-layer critical-path breakdown for one (seq_len, split) choice."""

    total: float
    t_recompute: float
    t_kv: float
    t_act: float


@dataclass(frozen=True)
class SplitDecision:
    """Chosen split for one decode step, with its predicted layer time."""

    step: int
    seq_len: int
    recompute_len: int
    t_total: float
    t_recompute: float
    t_kv: float
    t_act: float


@dataclass(frozen=True)
class SplitPlan:
    """Per-step split decisions for a full generation."""

    mode: str
    decisions: tuple[SplitDecision, ...]

    def __post_init__(self) -> None:
        _check_mode(self.mode)


def _check_mode(mode: str) -> None:
    if mode not in SCHEDULE_MODES:
        raise ValueError(f"mode must be one of {SCHEDULE_MODES}, got {mode!r}")


def layer_time(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    seq_len: int,
    split: int,
    mode: str,
) -> LayerTime:
    """Critical-path time of one layer's cache build under a given split."""
    _check_mode(mode)
    t_rec = compute_time(profile, recompute_flops(spec, wl, split))
    t_kv = transfer_time(profile, kv_remainder_bytes(spec, wl, seq_len, split), "h2d")
    if mode == "column":
        t_act = transfer_time(profile, activation_bytes(spec, wl, split), "h2d")
    else:
        t_act = 0.0
    return LayerTime(t_act + max(t_rec, t_kv), t_rec, t_kv, t_act)


def _continuous_split(
    spec: ModelSpec, wl: WorkloadSpec, profile: HardwareProfile, seq_len: int
) -> float:
    """Crossover l* where recompute time equals remaining-KV transfer time.

    At zero transfer latency l* = s' / (1 + 2*h*bw / (q*v)), and the
    degenerate rates fall out naturally (v = 0 gives l* = 0, v = inf gives
    l* = s').  A fixed per-transfer latency shifts the kink upward to
    (latency + c*s') / (r + c), with r and c the per-position recompute and
    transfer slopes; the zero-latency branch keeps the documented form.
    """
    v = profile.effective_gpu_flops
    if v == 0:
        return 0.0
    q = kv_element_bytes(spec, wl)
    if profile.transfer_latency == 0:
        ratio = 2 * spec.hidden_dim * profile.h2d_bandwidth / (q * v)
        return seq_len / (1.0 + ratio)
    r = 4 * wl.batch_size * spec.hidden_dim * spec.hidden_dim / v
    c = 2 * wl.batch_size * spec.hidden_dim * q / profile.h2d_bandwidth
    return (profile.transfer_latency + c * seq_len) / (r + c)


def _pick(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    seq_len: int,
    mode: str,
    candidates,
    step: int,
) -> SplitDecision:
    best_split = -1
    best: LayerTime | None = None
    for cand in candidates:
        lt = layer_time(spec, wl, profile, seq_len, cand, mode)
        if best is None or lt.total < best.total:
            best, best_split = lt, cand
    assert best is not None
    return SplitDecision(
        step=step,
        seq_len=seq_len,
        recompute_len=best_split,
        t_total=best.total,
        t_recompute=best.t_recompute,
        t_kv=best.t_kv,
        t_act=best.t_act,
    )


def solve_split(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    seq_len: int,
    mode: str,
    step: int = 0,
) -> SplitDecision:
    """Optimal split via the closed-form crossover plus candidate evaluation.

    One degenerate objective exists: in column mode with zero latency and the
    cache stored at exactly half the activation precision, the staging slope
    cancels the transfer slope and t(l) is flat everywhere left of the kink.
    Rounding then decides which plateau point the scan reports, which no
    candidate shortlist can reproduce, so that case defers to the scan.
    """
    _check_mode(mode)
    if seq_len < 0:
        raise ValueError("seq_len must be nonnegative")
    if (
        mode == "column"
        and profile.transfer_latency == 0
        and 2 * kv_element_bytes(spec, wl) == spec.precision_bytes
    ):
        return scan_split(spec, wl, profile, seq_len, mode, step)
    l_star = _continuous_split(spec, wl, profile, seq_len)
    cands = sorted({0, math.floor(l_star), math.ceil(l_star), seq_len})
    cands = [c for c in cands if 0 <= c <= seq_len]
    return _pick(spec, wl, profile, seq_len, mode, cands, step)


def scan_split(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    seq_len: int,
    mode: str,
    step: int = 0,
) -> SplitDecision:
    """Exhaustive-scan oracle: evaluate every split in [0, seq_len]."""
    _check_mode(mode)
    if seq_len < 0:
        raise ValueError("seq_len must be nonnegative")
    return _pick(spec, wl, profile, seq_len, mode, range(seq_len + 1), step)


def plan_generation(
    spec: ModelSpec,
    wl: WorkloadSpec,
    profile: HardwareProfile,
    mode: str,
) -> SplitPlan:
    """Solve every decode step of the workload (s' = prompt_len + step)."""
    decisions = tuple(
        solve_split(spec, wl, profile, wl.prompt_len + step, mode, step=step)
        for step in range(1, wl.gen_len + 1)
    )
    return SplitPlan(mode=mode, decisions=decisions)


def constant_plan(wl: WorkloadSpec, mode: str, split: int) -> SplitPlan:
    """Plan that pins every step's split (clamped to the step's cache length).

    Predicted times are left at zero; this exists for ablations and for the
    no-recompute baseline, where only the split values feed the simulator.
    """
    if split < 0:
        raise ValueError("split must be nonnegative")
    decisions = []
    for step in range(1, wl.gen_len + 1):
        seq_len = wl.prompt_len + step
        decisions.append(
            SplitDecision(
                step=step,
                seq_len=seq_len,
                recompute_len=min(split, seq_len),
                t_total=0.0,
                t_recompute=0.0,
                t_kv=0.0,
                t_act=0.0,
            )
        )
    return SplitPlan(mode=mode, decisions=tuple(decisions))


# ---------------------------------------------------------------------------
# plan serialization

def export_plan(
    plan: SplitPlan, spec: ModelSpec, wl: WorkloadSpec, profile: HardwareProfile
) -> dict:
    """Self-contained plan document: config context plus per-step decisions."""
    return {
        "mode": plan.mode,
        "model": asdict(spec),
        "workload": asdict(wl),
        "profile": profile.to_dict(),
        "decisions": [
            {
                "step": d.step,
                "seq_len": d.seq_len,
                "l": d.recompute_len,
                "t_total_s": d.t_total,
                "t_recomp_s": d.t_recompute,
                "t_kv_s": d.t_kv,
                "t_act_s": d.t_act,
            }
            for d in plan.decisions
        ],
    }


def import_plan(doc: dict) -> tuple[SplitPlan, ModelSpec, WorkloadSpec, HardwareProfile]:
    """Inverse of :func:`export_plan`; validates decision consistency."""
    spec = ModelSpec(**doc["model"])
    wl = WorkloadSpec(**doc["workload"])
    profile = HardwareProfile.from_dict(doc["profile"])
    decisions = []
    for entry in doc["decisions"]:
        d = SplitDecision(
            step=entry["step"],
            seq_len=entry["seq_len"],
            recompute_len=entry["l"],
            t_total=entry["t_total_s"],
            t_recompute=entry["t_recomp_s"],
            t_kv=entry["t_kv_s"],
            t_act=entry["t_act_s"],
        )
        if not 0 <= d.recompute_len <= d.seq_len:
            raise ValueError(f"step {d.step}: split {d.recompute_len} out of range")
        decisions.append(d)
    plan = SplitPlan(mode=doc["mode"], decisions=tuple(decisions))
    if len(plan.decisions) != wl.gen_len:
        raise ValueError("plan length does not match workload gen_len")
    for step, d in enumerate(plan.decisions, start=1):
        if d.step != step or d.seq_len != wl.prompt_len + step:
            raise ValueError(f"plan step {step} inconsistent with workload")
    return plan, spec, wl, profile


def plan_to_json(
    plan: SplitPlan, spec: ModelSpec, wl: WorkloadSpec, profile: HardwareProfile
) -> str:
    return json.dumps(export_plan(plan, spec, wl, profile), indent=2, sort_keys=True)
