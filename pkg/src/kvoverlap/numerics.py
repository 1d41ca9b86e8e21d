"""Dense float64 reference kernels for split-and-merge attention.

The point under test: rebuilding the leading ``l`` cache positions from
their layer inputs and concatenating the transferred tail must be *exactly*
the full cache, so decode attention over the merged state is the unmodified
attention computation — no approximation anywhere in the dataflow.  All
kernels are plain matrix products in float64 on small shapes; matrices are
numpy ndarrays (row-major, 2-D) and are never mutated in place.

Single-token decode attends over the entire cache, so no causal mask or
positional handling appears here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_matrix(name: str, m: np.ndarray, rows: int | None = None, cols: int | None = None):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} cols, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """(rows, h) -> (heads, rows, d_head), d_head = h // heads."""
    rows, h = x.shape
    if h % num_heads:
        raise ValueError("hidden size not divisible by head count")
    return x.reshape(rows, num_heads, h // num_heads).transpose(1, 0, 2)


@dataclass(frozen=True)
class KVState:
    """Per-head key/value cache: arrays shaped (num_heads, seq_len, d_head)."""

    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        k = np.asarray(self.keys, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if k.ndim != 3 or v.ndim != 3:
            raise ValueError("keys/values must be (num_heads, seq_len, d_head)")
        if k.shape != v.shape:
            raise ValueError(f"key shape {k.shape} != value shape {v.shape}")
        if not (np.isfinite(k).all() and np.isfinite(v).all()):
            raise ValueError("KV entries must be finite")
        object.__setattr__(self, "keys", k)
        object.__setattr__(self, "values", v)

    @property
    def num_heads(self) -> int:
        return self.keys.shape[0]

    @property
    def seq_len(self) -> int:
        return self.keys.shape[1]

    @property
    def head_dim(self) -> int:
        return self.keys.shape[2]


def project_qkv(
    x: np.ndarray,
    w_q: np.ndarray,
    w_k: np.ndarray,
    w_v: np.ndarray,
    num_heads: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Q/K/V projections of ``x`` (rows, h), each split per head."""
    x = _check_matrix("x", x)
    h = x.shape[1]
    w_q = _check_matrix("w_q", w_q, h, h)
    w_k = _check_matrix("w_k", w_k, h, h)
    w_v = _check_matrix("w_v", w_v, h, h)
    return (
        _split_heads(x @ w_q, num_heads),
        _split_heads(x @ w_k, num_heads),
        _split_heads(x @ w_v, num_heads),
    )


def build_kv(x: np.ndarray, w_k: np.ndarray, w_v: np.ndarray, num_heads: int) -> KVState:
    """Full cache from all layer inputs: K = X W_K, V = X W_V, per head."""
    x = _check_matrix("x", x)
    h = x.shape[1]
    w_k = _check_matrix("w_k", w_k, h, h)
    w_v = _check_matrix("w_v", w_v, h, h)
    return KVState(
        keys=_split_heads(x @ w_k, num_heads),
        values=_split_heads(x @ w_v, num_heads),
    )


def split_merge_kv(
    x_full: np.ndarray,
    split: int,
    w_k: np.ndarray,
    w_v: np.ndarray,
    kv_suffix: KVState,
) -> KVState:
    """Recompute cache positions [0, split), concatenate the transferred tail.

    ``kv_suffix`` must cover positions [split, len(x_full)) of the same
    sequence; the result covers the whole range.
    """
    x_full = _check_matrix("x_full", x_full)
    seq_len, h = x_full.shape
    if not 0 <= split <= seq_len:
        raise ValueError(f"split must be in [0, {seq_len}], got {split}")
    if kv_suffix.seq_len != seq_len - split:
        raise ValueError(
            f"suffix covers {kv_suffix.seq_len} positions, expected {seq_len - split}"
        )
    if split == 0:
        return kv_suffix
    w_k = _check_matrix("w_k", w_k, h, h)
    w_v = _check_matrix("w_v", w_v, h, h)
    heads = kv_suffix.num_heads
    k_prefix = _split_heads(x_full[:split] @ w_k, heads)
    v_prefix = _split_heads(x_full[:split] @ w_v, heads)
    return KVState(
        keys=np.concatenate([k_prefix, kv_suffix.keys], axis=1),
        values=np.concatenate([v_prefix, kv_suffix.values], axis=1),
    )


def append_token_kv(
    kv: KVState, x_new: np.ndarray, w_k: np.ndarray, w_v: np.ndarray
) -> KVState:
    """New state with the projected token appended; prior entries unchanged."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim == 1:
        x_new = x_new[None, :]
    x_new = _check_matrix("x_new", x_new, rows=1)
    h = x_new.shape[1]
    if kv.num_heads * kv.head_dim != h:
        raise ValueError("token width does not match cache geometry")
    w_k = _check_matrix("w_k", w_k, h, h)
    w_v = _check_matrix("w_v", w_v, h, h)
    return KVState(
        keys=np.concatenate([kv.keys, _split_heads(x_new @ w_k, kv.num_heads)], axis=1),
        values=np.concatenate([kv.values, _split_heads(x_new @ w_v, kv.num_heads)], axis=1),
    )


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax of a 1-D vector, stabilized by subtracting the max."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def decode_attention(q_token: np.ndarray, kv: KVState, w_o: np.ndarray) -> np.ndarray:
    """One decode step of multi-head attention against the cache.

    ``q_token`` is the already-projected query row (length h); returns the
    output row after per-head scaled dot-product attention and W_O.
    """
    if kv.seq_len == 0:
        raise ValueError("cannot attend over an empty cache")
    q = np.asarray(q_token, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("q_token must be a 1-D row of length h")
    h = kv.num_heads * kv.head_dim
    if q.shape[0] != h:
        raise ValueError(f"q_token has length {q.shape[0]}, expected {h}")
    if not np.isfinite(q).all():
        raise ValueError("q_token contains non-finite entries")
    w_o = _check_matrix("w_o", w_o, h, h)

    scale = 1.0 / math.sqrt(kv.head_dim)
    q_heads = q.reshape(kv.num_heads, kv.head_dim)
    out_heads = np.empty_like(q_heads)
    for hd in range(kv.num_heads):
        logits = (kv.keys[hd] @ q_heads[hd]) * scale
        weights = stable_softmax(logits)
        out_heads[hd] = weights @ kv.values[hd]
    return out_heads.reshape(h) @ w_o
