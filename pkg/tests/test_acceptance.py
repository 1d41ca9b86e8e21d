"""End-to-end acceptance gate.

Each test checks one headline property of the package at a pinned
tolerance, records the outcome through the ``criterion`` fixture (the
conftest hook prints a [PASS]/[FAIL] line per criterion after the run),
and fails with the collected evidence if the property does not hold.
Frozen constants in this file were derived once from the model and the
simulator and are regression anchors; they must never be edited to make
a failing run pass.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from kvoverlap.cli import load_config_doc, setup_from_doc
from kvoverlap.costmodel import ModelSpec, WorkloadSpec, kv_cache_bytes, opt_preset
from kvoverlap.hwprofile import HardwareProfile, transfer_time
from kvoverlap.numerics import KVState, build_kv, decode_attention, split_merge_kv
from kvoverlap.pipesim import Policy, build_task_graph, compare, simulate
from kvoverlap.scheduler import (
    constant_plan,
    layer_time,
    plan_generation,
    scan_split,
    solve_split,
)

GIB = 2**30
DEMO_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "demo.json"


def _demo_setup():
    return setup_from_doc(load_config_doc(str(DEMO_CONFIG)))


def _rel_err(got: float, want: float) -> float:
    return abs(got - want) / abs(want)


# ---------------------------------------------------------------------------

def test_criterion_01_cache_footprints_and_transfer_times(criterion):
    # three decoder sizes, batch 32, 1024 cached positions, fp16 cache
    table = [
        ("opt-6.7b", 536_870_912, 0.0156),
        ("opt-13b", 671_088_640, 0.0195),
        ("opt-30b", 939_524_096, 0.0273),
    ]
    profile = HardwareProfile(gpu_flops=1e15, h2d_bandwidth=32 * GIB, d2h_bandwidth=32 * GIB)
    wl = WorkloadSpec(batch_size=32, prompt_len=1023, gen_len=1)
    failures = []
    for preset, want_bytes, want_time in table:
        spec = opt_preset(preset)
        got_bytes = kv_cache_bytes(spec, wl, 1024)
        if got_bytes != want_bytes:
            failures.append(f"{preset}: cache {got_bytes} B, expected {want_bytes} B")
        t = transfer_time(profile, got_bytes, "h2d")
        if _rel_err(t, want_time) > 0.005:
            failures.append(f"{preset}: transfer {t:.6f} s vs {want_time} s (>0.5%)")
        if not t < 1.0:
            failures.append(f"{preset}: transfer {t:.6f} s not sub-second")
    ok = criterion(
        "01", "cache footprints and 32 GiB/s transfer times for the three presets", not failures
    )
    assert ok, failures


def test_criterion_02_solver_matches_exhaustive_scan(criterion):
    rng = np.random.default_rng(20260816)
    failures = []
    t0 = time.perf_counter()
    for case in range(1000):
        h = int(rng.choice([512, 1024, 2048, 4096, 5120, 7168]))
        spec = ModelSpec(hidden_dim=h, num_layers=2, num_heads=8, ffn_dim=4 * h)
        wl = WorkloadSpec(
            batch_size=int(rng.integers(1, 65)),
            prompt_len=1,
            gen_len=1,
            kv_bytes_per_element=[None, 2.0, 1.0, 0.5625][int(rng.integers(0, 4))],
        )
        profile = HardwareProfile(
            gpu_flops=float(rng.uniform(1e12, 5e14)),
            h2d_bandwidth=float(rng.uniform(1, 64)) * GIB,
            d2h_bandwidth=32 * GIB,
            transfer_latency=float(rng.choice([0.0, 1e-6, 1e-4])),
        )
        seq_len = int(rng.integers(0, 4097))
        mode = ("row", "column")[int(rng.integers(0, 2))]
        got = solve_split(spec, wl, profile, seq_len, mode)
        want = scan_split(spec, wl, profile, seq_len, mode)
        if got != want:
            failures.append(
                f"case {case}: h={h} s'={seq_len} {mode}: "
                f"solver l={got.recompute_len} t={got.t_total!r}, "
                f"scan l={want.recompute_len} t={want.t_total!r}"
            )
    elapsed = time.perf_counter() - t0
    if elapsed >= 30.0:
        failures.append(f"runtime {elapsed:.1f} s exceeds the 30 s budget")
    ok = criterion(
        "02", "closed-form split equals the exhaustive scan on 1000 random configs", not failures
    )
    assert ok, failures[:10]


def test_criterion_03_split_monotone_across_generation(criterion):
    rng = np.random.default_rng(3)
    failures = []
    for case in range(100):
        h = int(rng.choice([512, 1024, 2048, 4096]))
        spec = ModelSpec(hidden_dim=h, num_layers=2, num_heads=8, ffn_dim=4 * h)
        q = [None, 1.0, 0.5625][int(rng.integers(0, 3))]
        profile = HardwareProfile(
            gpu_flops=float(rng.uniform(1e12, 5e14)),
            h2d_bandwidth=float(rng.uniform(1, 64)) * GIB,
            d2h_bandwidth=32 * GIB,
            transfer_latency=float(rng.choice([0.0, 1e-6, 1e-4])),
        )
        mode = ("row", "column")[int(rng.integers(0, 2))]
        if mode == "column" and profile.transfer_latency == 0 and q == 1.0:
            # cache at exactly half precision with zero latency makes the
            # column objective flat left of the kink: every split there is
            # co-optimal and the reported argmin is rounding lottery, so
            # monotonicity of the representative is ill-posed. Unique-optimum
            # configs only; the plateau itself is pinned in test_scheduler.
            q = None
        wl = WorkloadSpec(
            batch_size=int(rng.integers(1, 33)),
            prompt_len=int(rng.integers(0, 513)),
            gen_len=int(rng.integers(1, 257)),
            kv_bytes_per_element=q,
        )
        plan = plan_generation(spec, wl, profile, mode)
        splits = [d.recompute_len for d in plan.decisions]
        if any(b < a for a, b in zip(splits, splits[1:])):
            failures.append(f"case {case}: splits not monotone: {splits[:12]}...")
    ok = criterion(
        "03",
        "per-step split is monotone non-decreasing as the cache grows (unique optima)",
        not failures,
    )
    assert ok, failures


def test_criterion_04_simulated_layer_matches_analytic_model(criterion):
    rng = np.random.default_rng(4)
    failures = []
    for case in range(100):
        h = int(rng.choice([256, 512, 1024, 2048]))
        spec = ModelSpec(hidden_dim=h, num_layers=1, num_heads=8, ffn_dim=4 * h)
        wl = WorkloadSpec(batch_size=int(rng.integers(1, 33)),
                          prompt_len=int(rng.integers(16, 2049)), gen_len=1)
        profile = HardwareProfile(
            gpu_flops=float(rng.uniform(1e13, 5e14)),
            h2d_bandwidth=float(rng.uniform(2, 64)) * GIB,
            d2h_bandwidth=32 * GIB,
            transfer_latency=float(rng.choice([0.0, 1e-6, 1e-4])),
        )
        seq_len = wl.prompt_len + 1
        solved = solve_split(spec, wl, profile, seq_len, "column", step=1).recompute_len
        for split in {solved, int(rng.integers(0, seq_len + 1)), 0, seq_len}:
            plan = constant_plan(wl, "column", split)
            graph = build_task_graph(spec, wl, profile, plan, Policy("column", True))
            timeline, _ = simulate(graph, profile)
            ready = max(
                e.end for e in timeline.entries
                if e.kind in ("compute_recompute", "load_cache")
            )
            want = layer_time(spec, wl, profile, seq_len, split, "column").total
            if abs(ready - want) > 1e-9 * want:
                failures.append(
                    f"case {case} l={split}: simulated {ready!r} vs analytic {want!r}"
                )
    ok = criterion(
        "04", "simulated cache-ready time equals the analytic layer model (rel 1e-9)",
        not failures,
    )
    assert ok, failures[:10]


def test_criterion_05a_recompute_never_loses_when_transfer_bound(criterion):
    rng = np.random.default_rng(55)
    failures = []
    for case in range(40):
        h = int(rng.choice([1024, 2048, 4096]))
        spec = ModelSpec(
            hidden_dim=h, num_layers=int(rng.integers(1, 5)), num_heads=8, ffn_dim=4 * h
        )
        wl = WorkloadSpec(
            batch_size=int(rng.integers(8, 65)),
            prompt_len=int(rng.integers(512, 4096)),
            gen_len=int(rng.integers(1, 5)),
            num_batches=int(rng.integers(1, 3)),
        )
        profile = HardwareProfile(
            gpu_flops=float(rng.uniform(1e14, 5e14)),
            h2d_bandwidth=float(rng.uniform(8, 64)) * GIB,
            d2h_bandwidth=32 * GIB,
            transfer_latency=float(rng.choice([0.0, 1e-6])),
        )
        mode = ("row", "column")[int(rng.integers(0, 2))]
        rows = compare(
            spec, wl, profile,
            [("naive", Policy(mode, False)), ("kvpr", Policy(mode, True))],
        )
        if rows[1]["makespan_s"] > rows[0]["makespan_s"]:
            failures.append(
                f"case {case} {mode}: kvpr {rows[1]['makespan_s']!r} s > "
                f"naive {rows[0]['makespan_s']!r} s"
            )
    ok = criterion(
        "05a", "recomputation never loses to the naive baseline when transfer-bound",
        not failures,
    )
    assert ok, failures


def test_criterion_05b_fine_weight_loads_never_lose(criterion):
    failures = []
    spec = ModelSpec(hidden_dim=4096, num_layers=4, num_heads=32, ffn_dim=16384)
    profile = HardwareProfile(
        gpu_flops=3.12e14, h2d_bandwidth=32 * GIB, d2h_bandwidth=32 * GIB
    )
    for batch in (1, 2, 4, 8, 16, 32):
        wl = WorkloadSpec(batch_size=batch, prompt_len=256, gen_len=2, num_batches=4)
        plan = plan_generation(spec, wl, profile, "column")
        out = {}
        for gran in ("fine", "coarse"):
            policy = Policy("column", True, gran, weights_resident=False)
            graph = build_task_graph(spec, wl, profile, plan, policy)
            out[gran] = simulate(graph, profile)[1].makespan
        if out["fine"] > out["coarse"]:
            failures.append(
                f"b={batch}: fine {out['fine']!r} s > coarse {out['coarse']!r} s"
            )

    # frozen witness where the half-size first load is strictly on the
    # critical path: single unit, streamed weights, recompute-heavy split
    wspec = ModelSpec(hidden_dim=4096, num_layers=1, num_heads=32, ffn_dim=16384)
    wwl = WorkloadSpec(batch_size=32, prompt_len=1023, gen_len=1)
    wplan = plan_generation(wspec, wwl, profile, "row")
    wit = {}
    for gran in ("fine", "coarse"):
        policy = Policy("row", True, gran, weights_resident=False)
        graph = build_task_graph(wspec, wwl, profile, wplan, policy)
        wit[gran] = simulate(graph, profile)[1].makespan
    if wit["fine"] != 0.008801563424439102:
        failures.append(f"witness fine makespan drifted: {wit['fine']!r}")
    if wit["coarse"] != 0.008808638552205128:
        failures.append(f"witness coarse makespan drifted: {wit['coarse']!r}")
    if not wit["fine"] < wit["coarse"]:
        failures.append("witness: fine does not strictly beat coarse")
    ok = criterion(
        "05b", "fine-grained weight loads never lose to coarse and win when weight-gated",
        not failures,
    )
    assert ok, failures


def test_criterion_06_zero_split_degenerates_to_naive(criterion):
    spec = ModelSpec(hidden_dim=64, num_layers=2, num_heads=4, ffn_dim=256)
    wl = WorkloadSpec(batch_size=2, prompt_len=8, gen_len=2, num_batches=2)
    profile = HardwareProfile(
        gpu_flops=1e12, h2d_bandwidth=GIB, d2h_bandwidth=GIB, transfer_latency=1e-6
    )
    failures = []
    for schedule in ("row", "column"):
        plan = constant_plan(wl, schedule, 0)
        g_naive = build_task_graph(spec, wl, profile, plan, Policy(schedule, False))
        g_zero = build_task_graph(spec, wl, profile, plan, Policy(schedule, True))
        t_naive, r_naive = simulate(g_naive, profile)
        t_zero, r_zero = simulate(g_zero, profile)
        if t_naive != t_zero:
            failures.append(f"{schedule}: timelines differ")
        if r_naive != r_zero:
            failures.append(f"{schedule}: reports differ")
    ok = criterion(
        "06", "zero split reproduces the naive pipeline bit-for-bit", not failures
    )
    assert ok, failures


def test_criterion_07_split_rebuild_is_exact(criterion):
    rng = np.random.default_rng(7)
    failures = []
    checks = 0
    t0 = time.perf_counter()
    while checks < 1000:
        num_heads = int(rng.choice([1, 2, 4]))
        head_dim = int(rng.integers(1, 5))
        h = num_heads * head_dim
        seq_len = int(rng.integers(1, 33))
        x = rng.standard_normal((seq_len, h))
        w_k = rng.standard_normal((h, h))
        w_v = rng.standard_normal((h, h))
        w_o = rng.standard_normal((h, h))
        q_tok = rng.standard_normal(h)
        full = build_kv(x, w_k, w_v, num_heads)
        ref = decode_attention(q_tok, full, w_o)
        for split in range(seq_len + 1):
            suffix = KVState(
                keys=full.keys[:, split:, :], values=full.values[:, split:, :]
            )
            merged = split_merge_kv(x, split, w_k, w_v, suffix)
            kv_err = max(
                float(np.max(np.abs(merged.keys - full.keys))),
                float(np.max(np.abs(merged.values - full.values))),
            )
            att_err = float(np.max(np.abs(decode_attention(q_tok, merged, w_o) - ref)))
            if kv_err > 1e-12 or att_err > 1e-12:
                failures.append(
                    f"h={h} heads={num_heads} s'={seq_len} l={split}: "
                    f"kv_err={kv_err:.3e} att_err={att_err:.3e}"
                )
            checks += 1
    elapsed = time.perf_counter() - t0
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.1f} s exceeds the 10 s budget")
    ok = criterion(
        "07", f"split cache rebuild exact within 1e-12 over {checks} randomized checks",
        not failures,
    )
    assert ok, failures[:10]


def test_criterion_08_recompute_raises_gpu_utilization(criterion):
    setup = _demo_setup()
    rows = compare(
        setup.spec, setup.wl, setup.profile,
        [("naive", Policy("row", False)), ("kvpr", Policy("row", True))],
    )
    failures = []
    if not rows[1]["gpu_util"] > rows[0]["gpu_util"]:
        failures.append(
            f"kvpr util {rows[1]['gpu_util']!r} not above naive {rows[0]['gpu_util']!r}"
        )
    if rows[0]["gpu_util"] != 0.0027415906225959027:
        failures.append(f"naive utilization drifted: {rows[0]['gpu_util']!r}")
    if rows[1]["gpu_util"] != 1.0:
        failures.append(f"kvpr utilization drifted: {rows[1]['gpu_util']!r}")
    ok = criterion(
        "08", "recomputation lifts demo GPU utilization strictly", not failures
    )
    assert ok, failures


def test_criterion_09_cache_quantization_raises_throughput(criterion):
    setup = _demo_setup()
    wl16 = setup.wl
    wl4 = WorkloadSpec(
        batch_size=wl16.batch_size,
        prompt_len=wl16.prompt_len,
        gen_len=wl16.gen_len,
        num_batches=wl16.num_batches,
        kv_bytes_per_element=0.5625,  # 4-bit groupwise with fp16 scales
    )
    policy = [("kvpr", Policy("row", True))]
    tp16 = compare(setup.spec, wl16, setup.profile, policy)[0]["throughput_tok_s"]
    tp4 = compare(setup.spec, wl4, setup.profile, policy)[0]["throughput_tok_s"]
    failures = []
    if not tp4 > tp16:
        failures.append(f"quantized throughput {tp4!r} not above fp16 {tp16!r}")
    if tp16 != 203.12631734187744:
        failures.append(f"fp16 throughput drifted: {tp16!r}")
    if tp4 != 362.19613267549335:
        failures.append(f"quantized throughput drifted: {tp4!r}")
    ok = criterion(
        "09", "4-bit cache storage raises demo decode throughput strictly", not failures
    )
    assert ok, failures


def test_criterion_10_demo_speedup_reproduced(criterion):
    setup = _demo_setup()
    rows = compare(
        setup.spec, setup.wl, setup.profile,
        [("naive", Policy("row", False)), ("kvpr", Policy("row", True))],
    )
    failures = []
    if rows[0]["makespan_s"] != 4.017621156945847:
        failures.append(f"naive makespan drifted: {rows[0]['makespan_s']!r}")
    if rows[1]["makespan_s"] != 1.2602995187922008:
        failures.append(f"kvpr makespan drifted: {rows[1]['makespan_s']!r}")
    speedup = rows[1]["speedup_vs_first"]
    if speedup != pytest.approx(3.1878304300204015, rel=1e-12):
        failures.append(f"speedup {speedup!r} != 3.1878304300204015 (rel 1e-12)")
    ok = criterion(
        "10", "demo workload speedup 3.19x over the naive baseline reproduced", not failures
    )
    assert ok, failures
