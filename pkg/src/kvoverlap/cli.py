"""Command-line front end: plan, simulate, sweep, calibrate, validate.

Configuration is one JSON document (see README for the schema); flags
override file values.  Exit codes: 0 success, 1 invalid input, 2 memory
budget exceeded, 3 numeric validation failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import re
import sys
from dataclasses import dataclass

import numpy as np

from .costmodel import ModelSpec, WorkloadSpec, opt_preset
from .hwprofile import (
    CalibrationError,
    HardwareProfile,
    calibrate,
    profile_to_json,
    read_measurements_csv,
)
from .numerics import KVState, build_kv, decode_attention, split_merge_kv
from .pipesim import (
    GpuMemoryBudgetError,
    Policy,
    build_task_graph,
    compare,
    metrics_row,
    plan_for_policy,
    simulate,
    write_metrics_csv,
    write_trace,
)
from .scheduler import SplitPlan, constant_plan, import_plan, plan_to_json

log = logging.getLogger("kvoverlap")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_BUDGET = 2
EXIT_VALIDATION = 3

_WORKLOAD_AXES = ("batch_size", "num_batches", "prompt_len", "gen_len", "kv_bytes_per_element")
_HARDWARE_AXES = ("gpu_flops", "h2d_bw", "d2h_bw", "transfer_latency_s", "gpu_efficiency")


class ConfigError(ValueError):
    """Configuration file or flag value is invalid."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; our exit-code contract reserves 2
    def error(self, message):
        raise ConfigError(message)


@dataclass(frozen=True)
class RunSetup:
    spec: ModelSpec
    wl: WorkloadSpec
    profile: HardwareProfile
    policy: Policy
    gpu_mem_budget: float | None


def _section(doc: dict, name: str, required: bool) -> dict:
    if name not in doc:
        if required:
            raise ConfigError(f"config missing required section {name!r}")
        return {}
    if not isinstance(doc[name], dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return doc[name]


def _reject_unknown(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")


def _model_from(doc: dict) -> ModelSpec:
    fields = ("hidden_dim", "num_layers", "num_heads", "ffn_dim", "precision_bytes")
    _reject_unknown("model", doc, fields + ("preset",))
    if "preset" in doc:
        base = opt_preset(doc["preset"])
        merged = {f: getattr(base, f) for f in fields}
        merged.update({k: v for k, v in doc.items() if k != "preset"})
        return ModelSpec(**merged)
    missing = [f for f in fields[:-1] if f not in doc]
    if missing:
        raise ConfigError(f"model section missing: {', '.join(missing)}")
    return ModelSpec(**doc)


def _workload_from(doc: dict) -> WorkloadSpec:
    _reject_unknown("workload", doc, _WORKLOAD_AXES)
    try:
        return WorkloadSpec(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _hardware_from(doc: dict) -> tuple[HardwareProfile, float | None]:
    allowed = _HARDWARE_AXES + ("gpu_mem_budget_bytes",)
    _reject_unknown("hardware", doc, allowed)
    for key in ("gpu_flops", "h2d_bw", "d2h_bw"):
        if key not in doc:
            raise ConfigError(f"hardware section missing {key!r}")
    profile = HardwareProfile(
        gpu_flops=doc["gpu_flops"],
        h2d_bandwidth=doc["h2d_bw"],
        d2h_bandwidth=doc["d2h_bw"],
        transfer_latency=doc.get("transfer_latency_s", 0.0),
        gpu_efficiency=doc.get("gpu_efficiency", 1.0),
    )
    return profile, doc.get("gpu_mem_budget_bytes")


def _policy_from(doc: dict) -> Policy:
    _reject_unknown("policy", doc, ("schedule", "recompute", "granularity", "weights_resident"))
    recompute = doc.get("recompute", "on")
    if isinstance(recompute, str):
        if recompute not in ("on", "off"):
            raise ConfigError("policy.recompute must be 'on' or 'off'")
        recompute = recompute == "on"
    return Policy(
        schedule=doc.get("schedule", "row"),
        recompute=bool(recompute),
        granularity=doc.get("granularity", "coarse"),
        weights_resident=bool(doc.get("weights_resident", True)),
    )


def load_config_doc(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown("config", doc, ("model", "workload", "hardware", "policy"))
    return doc


def setup_from_doc(doc: dict) -> RunSetup:
    try:
        spec = _model_from(_section(doc, "model", required=True))
        wl = _workload_from(_section(doc, "workload", required=True))
        profile, budget = _hardware_from(_section(doc, "hardware", required=True))
        policy = _policy_from(_section(doc, "policy", required=False))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunSetup(spec=spec, wl=wl, profile=profile, policy=policy, gpu_mem_budget=budget)


def _plan_for(setup: RunSetup, split_override: int | None) -> SplitPlan:
    if split_override is not None:
        if split_override < 0:
            raise ConfigError("--l must be nonnegative")
        return constant_plan(setup.wl, setup.policy.schedule, split_override)
    return plan_for_policy(setup.spec, setup.wl, setup.profile, setup.policy)


def _write_text(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands

def cmd_plan(args) -> int:
    setup = setup_from_doc(load_config_doc(args.config))
    plan = _plan_for(setup, args.l)
    _write_text(
        plan_to_json(plan, setup.spec, setup.wl, setup.profile) + "\n", args.out
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    setup = setup_from_doc(load_config_doc(args.config))
    if args.l is not None:
        plan = _plan_for(setup, args.l)
    elif args.plan:
        with open(args.plan) as fh:
            doc = json.load(fh)
        plan, spec, wl, profile = import_plan(doc)
        if (spec, wl, profile) != (setup.spec, setup.wl, setup.profile):
            raise ConfigError("--plan document does not match the config")
    else:
        plan = _plan_for(setup, None)

    graph = build_task_graph(
        setup.spec, setup.wl, setup.profile, plan, setup.policy, setup.gpu_mem_budget
    )
    timeline, report = simulate(graph, setup.profile)
    label = "kvpr" if setup.policy.recompute else "naive"
    lines = [
        f"policy={label} schedule={setup.policy.schedule} "
        f"granularity={setup.policy.granularity} "
        f"recompute={'on' if setup.policy.recompute else 'off'} "
        f"weights_resident={setup.policy.weights_resident}",
        f"tasks={len(graph)}",
        f"makespan_s={report.makespan!r}",
        f"throughput_tok_s={report.decode_throughput!r}",
        f"gpu_utilization={report.gpu_utilization!r}",
        f"peak_gpu_bytes={report.peak_gpu_bytes!r}",
    ]
    lines += [f"breakdown.{kind}={frac!r}" for kind, frac in report.breakdown.items()]
    _write_text("".join(line + "\n" for line in lines), args.out)
    if args.trace:
        write_trace(timeline, args.trace)
    if args.metrics:
        with open(args.metrics, "w") as fh:
            write_metrics_csv([metrics_row(label, setup.policy, report)], fh)
    return EXIT_OK


_POLICY_MODIFIERS = {
    "row": ("schedule", "row"),
    "column": ("schedule", "column"),
    "coarse": ("granularity", "coarse"),
    "fine": ("granularity", "fine"),
    "resident": ("weights_resident", True),
    "offloaded": ("weights_resident", False),
}


def parse_policy_token(token: str, base: Policy) -> tuple[str, Policy]:
    parts = token.strip().split(":")
    head, mods = parts[0], parts[1:]
    if head == "naive":
        values = {"recompute": False}
    elif head == "kvpr":
        values = {"recompute": True}
    else:
        raise ConfigError(f"unknown policy {head!r} (use naive or kvpr)")
    values.setdefault("schedule", base.schedule)
    values.setdefault("granularity", base.granularity)
    values.setdefault("weights_resident", base.weights_resident)
    for mod in mods:
        if mod not in _POLICY_MODIFIERS:
            raise ConfigError(f"unknown policy modifier {mod!r}")
        field, value = _POLICY_MODIFIERS[mod]
        values[field] = value
    return token.strip(), Policy(**values)


def _parse_number(text: str):
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def parse_axis(vary: str) -> tuple[str, list]:
    if "=" not in vary:
        raise ConfigError("--vary expects AXIS=V1,V2,...")
    axis, _, rest = vary.partition("=")
    axis = axis.strip()
    values = [v for v in (s.strip() for s in rest.split(",")) if v]
    if not values:
        raise ConfigError("--vary axis has no values")
    if axis not in _WORKLOAD_AXES and axis not in _HARDWARE_AXES:
        known = ", ".join(_WORKLOAD_AXES + _HARDWARE_AXES)
        raise ConfigError(f"unknown sweep axis {axis!r}; known: {known}")
    return axis, [_parse_number(v) for v in values]


def cmd_sweep(args) -> int:
    doc = load_config_doc(args.config)
    base_setup = setup_from_doc(doc)
    axis, values = parse_axis(args.vary)
    policies = [
        parse_policy_token(tok, base_setup.policy)
        for tok in args.policies.split(",")
        if tok.strip()
    ]
    if not policies:
        raise ConfigError("--policies is empty")

    section = "workload" if axis in _WORKLOAD_AXES else "hardware"
    out_rows: list[list] = []
    for value in values:
        point = copy.deepcopy(doc)
        point.setdefault(section, {})[axis] = value
        setup = setup_from_doc(point)
        rows = compare(
            setup.spec, setup.wl, setup.profile, policies, setup.gpu_mem_budget
        )
        for row in rows:
            out_rows.append([axis, value] + [row[c] for c in _SWEEP_METRIC_COLS])

    text_rows = [",".join(_fmt_cell(c) for c in ["axis", "value"] + list(_SWEEP_METRIC_COLS))]
    text_rows += [",".join(_fmt_cell(c) for c in row) for row in out_rows]
    _write_text("".join(r + "\n" for r in text_rows), args.out)
    return EXIT_OK


_SWEEP_METRIC_COLS = (
    "policy",
    "schedule",
    "granularity",
    "recompute",
    "makespan_s",
    "throughput_tok_s",
    "gpu_util",
    "peak_gpu_bytes",
    "speedup_vs_first",
)


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_calibrate(args) -> int:
    records = read_measurements_csv(args.measurements)
    result = calibrate(records)
    _write_text(profile_to_json(result) + "\n", args.out)
    return EXIT_OK


def run_validation_cases(seed: int, cases: int) -> list[str]:
    """Randomized split-merge exactness cases; returns failure descriptions."""
    rng = np.random.default_rng(seed)
    failures: list[str] = []
    for case in range(cases):
        num_heads = int(rng.choice([1, 2, 4]))
        head_dim = int(rng.integers(1, 5))
        h = num_heads * head_dim
        seq_len = int(rng.integers(1, 33))
        batch = int(rng.integers(1, 5))
        for seq_idx in range(batch):
            x = rng.standard_normal((seq_len, h))
            w_k = rng.standard_normal((h, h))
            w_v = rng.standard_normal((h, h))
            w_o = rng.standard_normal((h, h))
            q = rng.standard_normal(h)
            full = build_kv(x, w_k, w_v, num_heads)
            ref = decode_attention(q, full, w_o)
            for split in range(seq_len + 1):
                suffix = KVState(
                    keys=full.keys[:, split:, :], values=full.values[:, split:, :]
                )
                merged = split_merge_kv(x, split, w_k, w_v, suffix)
                kv_err = max(
                    float(np.max(np.abs(merged.keys - full.keys))),
                    float(np.max(np.abs(merged.values - full.values))),
                )
                out = decode_attention(q, merged, w_o)
                att_err = float(np.max(np.abs(out - ref)))
                if kv_err > 1e-12 or att_err > 1e-12:
                    failures.append(
                        f"case={case} seq={seq_idx} h={h} heads={num_heads} "
                        f"s'={seq_len} l={split}: kv_err={kv_err:.3e} att_err={att_err:.3e}"
                    )
    return failures


def cmd_validate(args) -> int:
    if args.cases < 1:
        raise ConfigError("--cases must be >= 1")
    failures = run_validation_cases(args.seed, args.cases)
    if failures:
        for line in failures:
            print(f"FAIL {line}", file=sys.stderr)
        print(f"validation failed: {len(failures)} case(s)", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"ok: {args.cases} cases, all splits exact within 1e-12")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kvoverlap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="emit the per-step split plan as JSON")
    p_plan.add_argument("--config", required=True)
    p_plan.add_argument("--out")
    p_plan.add_argument("--l", type=int, default=None, help="fixed split override")
    p_plan.set_defaults(func=cmd_plan)

    p_sim = sub.add_parser("simulate", help="simulate one policy, print the report")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--plan", help="reuse a previously exported plan JSON")
    p_sim.add_argument("--out")
    p_sim.add_argument("--trace", help="write Chrome trace-event JSON here")
    p_sim.add_argument("--metrics", help="write metrics CSV here")
    p_sim.add_argument("--l", type=int, default=None, help="fixed split override")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="sweep one axis across policies")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--vary", required=True, metavar="AXIS=V1,V2,...")
    p_sweep.add_argument("--policies", default="naive,kvpr")
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="fit a hardware profile from CSV")
    p_cal.add_argument("--measurements", required=True)
    p_cal.add_argument("--out")
    p_cal.set_defaults(func=cmd_calibrate)

    p_val = sub.add_parser("validate", help="randomized split-merge exactness check")
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--cases", type=int, default=100)
    p_val.set_defaults(func=cmd_validate)
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("KVOVERLAP_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"warning: ignoring KVOVERLAP_LOG={level_name!r}", file=sys.stderr)
        level_name = "error"
    logging.basicConfig(
        level=levels[level_name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except GpuMemoryBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, CalibrationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
