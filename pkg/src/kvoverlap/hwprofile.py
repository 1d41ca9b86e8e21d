"""Hardware profiles: transfer/compute rates and measurement calibration.

Bandwidths use binary prefixes throughout (1 GiB/s = 2**30 B/s).  Transfer
time follows an affine model, latency + bytes/bandwidth, with the latency
waived for empty transfers.  Profiles can be written down directly or fitted
from measurement records with :func:`calibrate`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

TRANSFER_DIRECTIONS = ("h2d", "d2h")
MEASUREMENT_KINDS = ("h2d", "d2h", "gemm")


class CalibrationError(ValueError):
    """Raised when measurement records cannot support a fit."""


@dataclass(frozen=True)
class HardwareProfile:
    """Rates for the three modeled resources plus fixed transfer latency.

    ``gpu_flops`` of zero is allowed as the degenerate "compute infinitely
    slow" profile; any positive amount of work then takes infinite time.
    """

    gpu_flops: float
    h2d_bandwidth: float
    d2h_bandwidth: float
    transfer_latency: float = 0.0
    gpu_efficiency: float = 1.0

    def __post_init__(self) -> None:
        if not self.gpu_flops >= 0:
            raise ValueError("gpu_flops must be nonnegative")
        if not self.h2d_bandwidth > 0:
            raise ValueError("h2d_bandwidth must be positive")
        if not self.d2h_bandwidth > 0:
            raise ValueError("d2h_bandwidth must be positive")
        if self.transfer_latency < 0:
            raise ValueError("transfer_latency must be nonnegative")
        if not 0 < self.gpu_efficiency <= 1:
            raise ValueError("gpu_efficiency must be in (0, 1]")

    @property
    def effective_gpu_flops(self) -> float:
        return self.gpu_flops * self.gpu_efficiency

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareProfile":
        return cls(**d)


def transfer_time(profile: HardwareProfile, nbytes: float, direction: str) -> float:
    """Seconds to move ``nbytes`` across PCIe in the given direction."""
    if direction not in TRANSFER_DIRECTIONS:
        raise ValueError(f"direction must be one of {TRANSFER_DIRECTIONS}")
    if nbytes < 0:
        raise ValueError("nbytes must be nonnegative")
    if nbytes == 0:
        return 0.0
    bw = profile.h2d_bandwidth if direction == "h2d" else profile.d2h_bandwidth
    return profile.transfer_latency + nbytes / bw


def compute_time(profile: HardwareProfile, flops: float) -> float:
    """Seconds to execute ``flops`` on the GPU at effective throughput."""
    if flops < 0:
        raise ValueError("flops must be nonnegative")
    if flops == 0:
        return 0.0
    v = profile.effective_gpu_flops
    if v == 0:
        return math.inf
    return flops / v


# ---------------------------------------------------------------------------
# calibration from measurements

@dataclass(frozen=True)
class Measurement:
    """One timed operation: kind in {h2d, d2h, gemm}, size in bytes or FLOPs."""

    kind: str
    size: float
    elapsed_s: float

    def __post_init__(self) -> None:
        if self.kind not in MEASUREMENT_KINDS:
            raise ValueError(f"kind must be one of {MEASUREMENT_KINDS}")
        if self.size <= 0:
            raise ValueError("size must be positive")
        if self.elapsed_s <= 0:
            raise ValueError("elapsed_s must be positive")


def read_measurements_csv(path: str) -> list[Measurement]:
    """Parse `kind,size,elapsed_s` rows; a header line is allowed."""
    records: list[Measurement] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "kind":
                continue
            if len(row) != 3:
                raise CalibrationError(f"line {lineno}: expected kind,size,elapsed_s")
            try:
                records.append(
                    Measurement(row[0].strip(), float(row[1]), float(row[2]))
                )
            except ValueError as exc:
                raise CalibrationError(f"line {lineno}: {exc}") from exc
    return records


@dataclass(frozen=True)
class CalibrationResult:
    profile: HardwareProfile
    residual_rms: dict[str, float]


def calibrate(records: list[Measurement], gpu_efficiency: float = 1.0) -> CalibrationResult:
    """Least-squares affine fit elapsed = latency + size/rate per kind.

    Requires at least two records of distinct sizes for each of h2d, d2h and
    gemm.  The profile latency is the mean of the two transfer intercepts
    (clamped at zero); the gemm intercept only enters the residual report.
    """
    fits: dict[str, tuple[float, float, float]] = {}
    for kind in MEASUREMENT_KINDS:
        xs = np.array([m.size for m in records if m.kind == kind], dtype=np.float64)
        ys = np.array([m.elapsed_s for m in records if m.kind == kind], dtype=np.float64)
        if len(xs) < 2:
            raise CalibrationError(f"need at least 2 {kind} records, got {len(xs)}")
        if np.unique(xs).size < 2:
            raise CalibrationError(f"{kind} records all share one size; fit is degenerate")
        slope, intercept = np.polyfit(xs, ys, 1)
        if slope <= 0:
            raise CalibrationError(f"{kind} fit gives nonpositive rate")
        resid = ys - (intercept + slope * xs)
        fits[kind] = (1.0 / slope, float(intercept), float(np.sqrt(np.mean(resid**2))))

    latency = max(0.0, (fits["h2d"][1] + fits["d2h"][1]) / 2)
    profile = HardwareProfile(
        gpu_flops=fits["gemm"][0],
        h2d_bandwidth=fits["h2d"][0],
        d2h_bandwidth=fits["d2h"][0],
        transfer_latency=latency,
        gpu_efficiency=gpu_efficiency,
    )
    return CalibrationResult(
        profile=profile,
        residual_rms={kind: fits[kind][2] for kind in MEASUREMENT_KINDS},
    )


def profile_to_json(result: CalibrationResult) -> str:
    doc = {"profile": result.profile.to_dict(), "residual_rms": result.residual_rms}
    return json.dumps(doc, indent=2, sort_keys=True)
