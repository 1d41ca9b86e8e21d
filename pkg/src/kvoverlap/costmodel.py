"""Byte and FLOP accounting for offloaded transformer decoding.

Everything downstream (split planner, pipeline simulator, reports) is built
on the closed-form sizes in this module, so the conventions are pinned here:

* sizes are bytes, compute is FLOPs; no times anywhere in this module
* ``seq_len`` is the post-append cache length s' = prompt_len + step
* a "split" of ``split`` tokens means positions [0, split) of the cache are
  rebuilt on the GPU from their layer inputs instead of being transferred
* KV entries may be stored compressed (``kv_bytes_per_element``); layer
  inputs and weights always use the model precision
"""

from __future__ import annotations

from dataclasses import dataclass

GIB = 1024**3


@dataclass(frozen=True)
class ModelSpec:
    """Decoder architecture constants (uniform layers, MHA + FFN)."""

    hidden_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    precision_bytes: int = 2

    def __post_init__(self) -> None:
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.num_layers <= 0:
            raise ValueError("num_layers must be positive")
        if self.num_heads <= 0:
            raise ValueError("num_heads must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.ffn_dim <= 0:
            raise ValueError("ffn_dim must be positive")
        if self.precision_bytes not in (1, 2, 4, 8):
            raise ValueError("precision_bytes must be one of 1, 2, 4, 8")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


@dataclass(frozen=True)
class WorkloadSpec:
    """Decoding workload: batch geometry and sequence lengths.

    ``kv_bytes_per_element`` of None means the cache is stored at model
    precision (no compression).  Fractional values model quantized storage
    with per-group scale overhead.
    """

    batch_size: int
    prompt_len: int
    gen_len: int
    num_batches: int = 1
    kv_bytes_per_element: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.prompt_len < 0:
            raise ValueError("prompt_len must be nonnegative")
        if self.gen_len <= 0:
            raise ValueError("gen_len must be positive")
        if self.num_batches <= 0:
            raise ValueError("num_batches must be positive")
        if self.kv_bytes_per_element is not None and self.kv_bytes_per_element <= 0:
            raise ValueError("kv_bytes_per_element must be positive")


@dataclass(frozen=True)
class DecodeFlops:
    """Per-layer FLOP breakdown for one single-token decode step."""

    qkv_proj: int
    attention: int
    out_proj: int
    ffn: int

    @property
    def mha(self) -> int:
        return self.qkv_proj + self.attention + self.out_proj

    @property
    def total(self) -> int:
        return self.mha + self.ffn


# ---------------------------------------------------------------------------
# element sizes

def kv_element_bytes(spec: ModelSpec, wl: WorkloadSpec) -> float:
    """Bytes per stored KV element, defaulting to model precision."""
    q = wl.kv_bytes_per_element
    if q is None:
        return float(spec.precision_bytes)
    if q > spec.precision_bytes:
        raise ValueError("kv_bytes_per_element exceeds model precision")
    return float(q)


def groupwise_quant_bytes_per_element(
    bits: int = 4, group_size: int = 64, scale_bytes: int = 4
) -> float:
    """Effective bytes/element for groupwise quantization with scale overhead.

    4-bit with 4 scale bytes per 64-element group gives 0.5625 B/elem.
    """
    if bits <= 0 or group_size <= 0 or scale_bytes < 0:
        raise ValueError("quantization parameters must be positive")
    return bits / 8 + scale_bytes / group_size


# ---------------------------------------------------------------------------
# cache, activation and weight sizes

def kv_cache_bytes(spec: ModelSpec, wl: WorkloadSpec, seq_len: int) -> float:
    """Bytes of one layer's full K+V cache at length ``seq_len``."""
    if seq_len < 0:
        raise ValueError("seq_len must be nonnegative")
    return 2 * wl.batch_size * seq_len * spec.hidden_dim * kv_element_bytes(spec, wl)


def kv_remainder_bytes(
    spec: ModelSpec, wl: WorkloadSpec, seq_len: int, split: int
) -> float:
    """Bytes of K+V cache left to transfer when [0, split) is recomputed."""
    _check_split(seq_len, split)
    return 2 * wl.batch_size * (seq_len - split) * spec.hidden_dim * kv_element_bytes(spec, wl)


def activation_bytes(spec: ModelSpec, wl: WorkloadSpec, prefix_len: int) -> int:
    """Bytes of layer input needed to rebuild KV for ``prefix_len`` positions."""
    if prefix_len < 0:
        raise ValueError("prefix_len must be nonnegative")
    return wl.batch_size * prefix_len * spec.hidden_dim * spec.precision_bytes


def token_activation_bytes(spec: ModelSpec, wl: WorkloadSpec) -> int:
    """Bytes of one decode step's layer input (a single position per sequence)."""
    return wl.batch_size * spec.hidden_dim * spec.precision_bytes


def token_kv_store_bytes(spec: ModelSpec, wl: WorkloadSpec) -> float:
    """Bytes written back per layer per step: the newly appended K+V entry."""
    return 2 * wl.batch_size * spec.hidden_dim * kv_element_bytes(spec, wl)


def mha_matrix_bytes(spec: ModelSpec) -> int:
    """Bytes of one h-by-h projection matrix."""
    return spec.hidden_dim * spec.hidden_dim * spec.precision_bytes


def mha_weight_bytes(spec: ModelSpec) -> int:
    """Bytes of one layer's four attention projection matrices."""
    return 4 * mha_matrix_bytes(spec)


# ---------------------------------------------------------------------------
# FLOP counts

def recompute_flops(spec: ModelSpec, wl: WorkloadSpec, split: int) -> int:
    """FLOPs to rebuild K and V for ``split`` positions from layer input.

    Two h-by-h products over b*split rows: 2 * (2 * b * split * h^2).
    """
    if split < 0:
        raise ValueError("split must be nonnegative")
    return 4 * wl.batch_size * split * spec.hidden_dim * spec.hidden_dim


def decode_step_flops(spec: ModelSpec, wl: WorkloadSpec, seq_len: int) -> DecodeFlops:
    """Per-layer FLOPs of one decode step against a cache of ``seq_len``."""
    if seq_len <= 0:
        raise ValueError("seq_len must be positive")
    b, h = wl.batch_size, spec.hidden_dim
    return DecodeFlops(
        qkv_proj=6 * b * h * h,
        attention=4 * b * seq_len * h,
        out_proj=2 * b * h * h,
        ffn=4 * b * h * spec.ffn_dim,
    )


# ---------------------------------------------------------------------------
# presets

_OPT_PRESETS = {
    "opt-6.7b": dict(hidden_dim=4096, num_layers=32, num_heads=32),
    "opt-13b": dict(hidden_dim=5120, num_layers=40, num_heads=40),
    "opt-30b": dict(hidden_dim=7168, num_layers=48, num_heads=56),
}


def opt_preset(name: str) -> ModelSpec:
    """Model constants for the OPT decoder family (fp16, ffn_dim = 4h)."""
    key = name.strip().lower()
    if key not in _OPT_PRESETS:
        known = ", ".join(sorted(_OPT_PRESETS))
        raise ValueError(f"unknown preset {name!r}; known presets: {known}")
    base = _OPT_PRESETS[key]
    return ModelSpec(
        hidden_dim=base["hidden_dim"],
        num_layers=base["num_layers"],
        num_heads=base["num_heads"],
        ffn_dim=4 * base["hidden_dim"],
        precision_bytes=2,
    )


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_OPT_PRESETS))


def _check_split(seq_len: int, split: int) -> None:
    if seq_len < 0:
        raise ValueError("seq_len must be nonnegative")
    if not 0 <= split <= seq_len:
        raise ValueError(f"split must be in [0, {seq_len}], got {split}")
