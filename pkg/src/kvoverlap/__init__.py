"""kvoverlap: planner, pipeline simulator and numeric validator for
CPU-GPU offloaded LLM decoding with partial KV-cache recomputation."""

from .costmodel import (
    DecodeFlops,
    ModelSpec,
    WorkloadSpec,
    activation_bytes,
    decode_step_flops,
    groupwise_quant_bytes_per_element,
    kv_cache_bytes,
    kv_element_bytes,
    kv_remainder_bytes,
    mha_matrix_bytes,
    mha_weight_bytes,
    opt_preset,
    preset_names,
    recompute_flops,
    token_activation_bytes,
    token_kv_store_bytes,
)
from .hwprofile import (
    CalibrationError,
    CalibrationResult,
    HardwareProfile,
    Measurement,
    calibrate,
    compute_time,
    read_measurements_csv,
    transfer_time,
)
from .scheduler import (
    LayerTime,
    SplitDecision,
    SplitPlan,
    constant_plan,
    export_plan,
    import_plan,
    layer_time,
    plan_generation,
    scan_split,
    solve_split,
)

__version__ = "0.1.0"
