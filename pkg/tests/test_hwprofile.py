"""Hardware profile arithmetic and measurement calibration.

Calibration tests synthesize measurements from a known affine model and
check the fit recovers the generating rates; parse errors and degenerate
inputs must fail loudly rather than produce a silently wrong profile.
"""

from __future__ import annotations

import json
import math

import pytest

from kvoverlap.hwprofile import (
    CalibrationError,
    HardwareProfile,
    Measurement,
    calibrate,
    compute_time,
    profile_to_json,
    read_measurements_csv,
    transfer_time,
)

GIB = 2**30


def _profile(**kw):
    base = dict(
        gpu_flops=312e12, h2d_bandwidth=32 * GIB, d2h_bandwidth=32 * GIB
    )
    base.update(kw)
    return HardwareProfile(**base)


# ---------------------------------------------------------------------------
# transfer / compute time

def test_transfer_time_affine():
    p = _profile(transfer_latency=1e-5)
    assert transfer_time(p, 32 * GIB, "h2d") == 1e-5 + 1.0
    assert transfer_time(p, 16 * GIB, "d2h") == 1e-5 + 0.5


def test_transfer_time_zero_bytes_waives_latency():
    p = _profile(transfer_latency=0.5)
    assert transfer_time(p, 0, "h2d") == 0.0
    assert transfer_time(p, 0, "d2h") == 0.0


def test_transfer_time_directions_differ():
    p = _profile(h2d_bandwidth=32 * GIB, d2h_bandwidth=8 * GIB)
    assert transfer_time(p, GIB, "d2h") == 4 * transfer_time(p, GIB, "h2d")


def test_transfer_time_validation():
    p = _profile()
    with pytest.raises(ValueError):
        transfer_time(p, 1.0, "sideways")
    with pytest.raises(ValueError):
        transfer_time(p, -1.0, "h2d")


def test_compute_time():
    p = _profile(gpu_flops=1e12)
    assert compute_time(p, 5e11) == 0.5
    assert compute_time(p, 0) == 0.0
    with pytest.raises(ValueError):
        compute_time(p, -1)


def test_compute_time_zero_flops_profile():
    # degenerate "infinitely slow" device: positive work never finishes
    p = _profile(gpu_flops=0.0)
    assert compute_time(p, 1.0) == math.inf
    assert compute_time(p, 0.0) == 0.0


def test_efficiency_scales_compute():
    p = _profile(gpu_flops=1e12, gpu_efficiency=0.5)
    assert p.effective_gpu_flops == 5e11
    assert compute_time(p, 1e12) == 2.0


# ---------------------------------------------------------------------------
# profile validation and round trip

def test_profile_validation():
    with pytest.raises(ValueError):
        _profile(gpu_flops=-1.0)
    with pytest.raises(ValueError):
        _profile(gpu_flops=float("nan"))
    with pytest.raises(ValueError):
        _profile(h2d_bandwidth=0.0)
    with pytest.raises(ValueError):
        _profile(d2h_bandwidth=-5.0)
    with pytest.raises(ValueError):
        _profile(transfer_latency=-1e-9)
    with pytest.raises(ValueError):
        _profile(gpu_efficiency=0.0)
    with pytest.raises(ValueError):
        _profile(gpu_efficiency=1.5)
    _profile(gpu_flops=0.0)  # allowed: degenerate profile


def test_profile_dict_round_trip():
    p = _profile(transfer_latency=2e-6, gpu_efficiency=0.8)
    assert HardwareProfile.from_dict(p.to_dict()) == p


# ---------------------------------------------------------------------------
# calibration

def _synthetic_records(bw_h2d, bw_d2h, flops, lat):
    sizes = [2**24, 2**26, 2**28, 2**30]
    recs = []
    for s in sizes:
        recs.append(Measurement("h2d", s, lat + s / bw_h2d))
        recs.append(Measurement("d2h", s, lat + s / bw_d2h))
    for f in (1e12, 4e12, 1.6e13):
        recs.append(Measurement("gemm", f, lat + f / flops))
    return recs


def test_calibrate_recovers_affine_model():
    bw_h, bw_d, v, lat = 30 * GIB, 25 * GIB, 280e12, 1.5e-5
    result = calibrate(_synthetic_records(bw_h, bw_d, v, lat))
    p = result.profile
    assert p.h2d_bandwidth == pytest.approx(bw_h, rel=1e-6)
    assert p.d2h_bandwidth == pytest.approx(bw_d, rel=1e-6)
    assert p.gpu_flops == pytest.approx(v, rel=1e-6)
    assert p.transfer_latency == pytest.approx(lat, rel=1e-6)
    for kind in ("h2d", "d2h", "gemm"):
        assert result.residual_rms[kind] < 1e-9


def test_calibrate_clamps_negative_latency():
    # convex-up noise can push the intercept below zero; clamp at 0
    recs = [
        Measurement("h2d", 1e6, 0.9 * 1e6 / (32 * GIB)),
        Measurement("h2d", 1e9, 1e9 / (32 * GIB)),
        Measurement("d2h", 1e6, 0.9 * 1e6 / (32 * GIB)),
        Measurement("d2h", 1e9, 1e9 / (32 * GIB)),
        Measurement("gemm", 1e12, 1e12 / 1e14),
        Measurement("gemm", 2e12, 2e12 / 1e14),
    ]
    assert calibrate(recs).profile.transfer_latency == 0.0


def test_calibrate_needs_two_sizes_per_kind():
    recs = _synthetic_records(GIB, GIB, 1e12, 0.0)
    only_h2d = [m for m in recs if m.kind == "h2d"]
    with pytest.raises(CalibrationError, match="d2h"):
        calibrate(only_h2d)
    same_size = [m for m in recs if m.kind != "gemm"]
    same_size += [Measurement("gemm", 1e12, 0.5), Measurement("gemm", 1e12, 0.6)]
    with pytest.raises(CalibrationError, match="one size"):
        calibrate(same_size)


def test_calibrate_rejects_nonpositive_rate():
    recs = _synthetic_records(GIB, GIB, 1e12, 0.0)
    recs = [m for m in recs if m.kind != "h2d"]
    # elapsed decreasing with size: negative slope
    recs += [Measurement("h2d", 1e6, 2.0), Measurement("h2d", 1e9, 1.0)]
    with pytest.raises(CalibrationError, match="nonpositive"):
        calibrate(recs)


def test_calibrate_passes_efficiency_through():
    result = calibrate(_synthetic_records(GIB, GIB, 1e12, 0.0), gpu_efficiency=0.7)
    assert result.profile.gpu_efficiency == 0.7


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement("warp", 1.0, 1.0)
    with pytest.raises(ValueError):
        Measurement("h2d", 0.0, 1.0)
    with pytest.raises(ValueError):
        Measurement("h2d", 1.0, -1.0)


# ---------------------------------------------------------------------------
# CSV parsing

def test_read_measurements_csv(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "kind,size,elapsed_s\n"
        "h2d,1048576,0.001\n"
        "\n"
        "gemm,1e12,0.004\n"
    )
    recs = read_measurements_csv(str(path))
    assert len(recs) == 2
    assert recs[0] == Measurement("h2d", 1048576.0, 0.001)
    assert recs[1].kind == "gemm" and recs[1].size == 1e12


def test_read_measurements_csv_no_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("d2h,100,0.5\n")
    assert read_measurements_csv(str(path)) == [Measurement("d2h", 100.0, 0.5)]


def test_read_measurements_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("h2d,100\n")
    with pytest.raises(CalibrationError, match="line 1"):
        read_measurements_csv(str(path))
    path.write_text("kind,size,elapsed_s\nh2d,abc,0.5\n")
    with pytest.raises(CalibrationError, match="line 2"):
        read_measurements_csv(str(path))
    path.write_text("sideways,100,0.5\n")
    with pytest.raises(CalibrationError):
        read_measurements_csv(str(path))


def test_profile_to_json_round_trips():
    result = calibrate(_synthetic_records(GIB, 2 * GIB, 1e12, 1e-6))
    doc = json.loads(profile_to_json(result))
    assert HardwareProfile.from_dict(doc["profile"]) == result.profile
    assert set(doc["residual_rms"]) == {"h2d", "d2h", "gemm"}
    # deterministic serialization
    assert profile_to_json(result) == profile_to_json(result)
