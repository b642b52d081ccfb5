"""Built-in self-check suites: the release gate behind `bpbn selftest`.

Each suite re-derives expected values from an independent oracle (naive
loops, exhaustive enumeration, the published table) and reports pass/fail.
Deterministic for a fixed seed; no timing or environment info in the
output.  The `corrupt_sign_tie` flag simulates a corrupted build by
flipping the sign tie rule on the system-under-test side -- the sign suite
must then fail (negative control for the harness itself).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binops import BinaryKernel, FloatAffine, binary_conv2d, fold_bn_to_threshold
from .bpie import reweight
from .costmodel import TABLE1_DEFAULTS, report
from .encoders import bit_rearrange
from .tensors import pack_bipolar, unpack_bipolar

__all__ = ["SuiteResult", "run_selftest"]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _pm1(rng, shape):
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)


def _suite_round_trip(rng) -> SuiteResult:
    for _ in range(300):
        shape = tuple(int(s) for s in rng.integers(1, 9, size=3))
        x = _pm1(rng, shape)
        if not np.array_equal(unpack_bipolar(pack_bipolar(x)), x):
            return SuiteResult("pack-round-trip", False, f"mismatch at shape {shape}")
        t = pack_bipolar(x)
        pad = t.size % 64
        if pad and int(t.words[-1]) >> pad != 0:
            return SuiteResult("pack-round-trip", False, "nonzero padding")
    return SuiteResult("pack-round-trip", True, "300 random shapes")


def _suite_reconstruction() -> SuiteResult:
    img = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
    stack = bit_rearrange(img, 8)
    total = np.zeros((16, 16), dtype=np.int64)
    for bp in range(8):
        total += stack.plane(0, bp).bits()[:, :, 0].astype(np.int64) << bp
    ok = bool(np.array_equal(total, img[:, :, 0]))
    return SuiteResult("bit-plane-reconstruction", ok, "all 256 pixel values")


def _naive_conv(x, w, padding, depthwise):
    x = np.asarray(x, dtype=np.float64)
    f = w.shape[0]
    if padding == "same":
        p = (f - 1) // 2
        x = np.pad(x, ((p, p), (p, p), (0, 0)), constant_values=1.0)
    h, ww, c = x.shape
    oh, ow = h - f + 1, ww - f + 1
    if depthwise:
        n = w.shape[3]
        out = np.zeros((oh, ow, c * n))
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    for m in range(n):
                        out[i, j, ch * n + m] = np.sum(
                            x[i : i + f, j : j + f, ch] * w[:, :, ch, m]
                        )
    else:
        o = w.shape[3]
        out = np.zeros((oh, ow, o))
        for i in range(oh):
            for j in range(ow):
                for m in range(o):
                    out[i, j, m] = np.sum(x[i : i + f, j : j + f, :] * w[:, :, :, m])
    return out


def _suite_kernel_equivalence(rng) -> SuiteResult:
    for trial in range(60):
        f = int(rng.choice([1, 3, 5]))
        h = int(rng.integers(f, f + 5))
        w = int(rng.integers(f, f + 5))
        c = int(rng.integers(1, 4))
        o = int(rng.integers(1, 3))
        depthwise = bool(rng.random() < 0.5)
        padding = "same" if rng.random() < 0.5 else "valid"
        x = _pm1(rng, (h, w, c))
        wgt = _pm1(rng, (f, f, c, o))
        packed = binary_conv2d(
            pack_bipolar(x), BinaryKernel(wgt, depthwise=depthwise), padding=padding
        )
        naive = _naive_conv(x, wgt.astype(np.float64), padding, depthwise)
        if not np.array_equal(packed, naive.astype(np.int32)):
            return SuiteResult(
                "kernel-equivalence", False, f"trial {trial} diverged"
            )
    return SuiteResult("kernel-equivalence", True, "60 random conv instances")


def _suite_threshold_fold(rng) -> SuiteResult:
    xs = np.arange(-9, 10)
    for trial in range(200):
        gamma = float(rng.uniform(-4, 4))
        if abs(gamma) < 1e-6:
            continue
        p = FloatAffine(
            gamma,
            float(rng.uniform(-6, 6)),
            float(rng.uniform(0.1, 5.0)),
            float(rng.uniform(-4, 4)),
        )
        t, pol = fold_bn_to_threshold(p)
        want = np.where(p.apply(xs) >= 0, 1, -1)
        got = pol * np.where(xs >= t, 1, -1)
        if not np.array_equal(got, want):
            return SuiteResult("threshold-fold", False, f"trial {trial} diverged")
    return SuiteResult("threshold-fold", True, "200 draws, x in [-9, 9]")


def _suite_reweight(rng) -> SuiteResult:
    for bp in range(8):
        v = rng.integers(-(2**24) + 1, 2**24, size=5000)
        if not np.array_equal(reweight(v, bp), v * 2**bp):
            return SuiteResult("shift-reweight", False, f"bp={bp} diverged")
    return SuiteResult("shift-reweight", True, "shift == multiply, bp 0..7")


def _suite_table1() -> SuiteResult:
    printed_ratios = {
        "dbid": 8.0, "bil": 10.8, "thermometer": 32.0,
        "ours(P=8,N1)": 2.6, "ours(P=4,N1)": 1.3, "ours(P=4,N2)": 1.0,
    }
    printed_speedups = {
        "dbid": 1.12, "bil": 0.81, "thermometer": 0.27,
        "ours(P=8,N1)": 3.42, "ours(P=4,N1)": 6.84, "ours(P=4,N2)": 9.0,
    }
    rep = report(TABLE1_DEFAULTS)
    for name, ratio in printed_ratios.items():
        if abs(rep.row(name).ratio - ratio) > 0.1:
            return SuiteResult("table1-regression", False, f"{name} ratio off")
    for name, spd in printed_speedups.items():
        if abs(rep.row(name).speedup - spd) > 0.02:
            return SuiteResult("table1-regression", False, f"{name} speedup off")
    return SuiteResult("table1-regression", True, "ratios +-0.1, speedups +-0.02")


def _suite_sign_tie(rng, corrupt: bool) -> SuiteResult:
    from .binops import sign_to_bits

    x = rng.integers(-5, 6, size=(6, 6, 3)).astype(np.int32)
    x[0, 0, 0] = 0  # force a tie onto the board
    got = unpack_bipolar(sign_to_bits(x))
    if corrupt:
        # corrupted-build simulation: pretend the engine mapped 0 -> -1
        got = np.where(x == 0, -got, got)
    want = np.where(x >= 0, 1, -1)
    ok = bool(np.array_equal(got, want))
    return SuiteResult("sign-tie-rule", ok, "zero maps to +1")


def run_selftest(seed: int = 0, corrupt_sign_tie: bool = False) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    return [
        _suite_round_trip(rng),
        _suite_reconstruction(),
        _suite_kernel_equivalence(rng),
        _suite_threshold_fold(rng),
        _suite_reweight(rng),
        _suite_table1(),
        _suite_sign_tie(rng, corrupt_sign_tie),
    ]
