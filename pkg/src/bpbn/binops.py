"""Binary and int8 compute kernels.

Production-path arithmetic for the engine:

* XNOR-popcount 2D convolution over packed bits (dense and depthwise),
* batch-norm affine in float and in Q16.16 fixed point,
* batch-norm + sign folded to a single integer threshold compare,
* sign/threshold binarization, 2x2 max pooling, binary dense,
* a plain int8 convolution used for the non-binarized baseline first layer.

Convolutions gather each receptive field into a packed row of 64-bit words
(bit-level im2col) and evaluate every (window, map) pair as
``n - 2 * popcount(xor)``; padding bits are zero on both sides of the XOR
so whole words can be counted unmasked.  "Same" padding pads with bipolar
+1 (bit 0), which is also what zeroed words decode to.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BpbnError, RangeOverflowError, ShapeError
from .tensors import (
    PackedBitTensor,
    pack_bits_lsb,
    popcount_words,
)

__all__ = [
    "BinaryKernel",
    "FloatAffine",
    "FixedAffine",
    "binary_conv2d",
    "binary_dense",
    "affine_fixed",
    "affine_fixed_per_map",
    "fold_bn_to_threshold",
    "sign_to_bits",
    "threshold_to_bits",
    "maxpool2",
    "int8_conv2d",
]

Q = 16  # Q16.16 fractional bits
Q_ONE = 1 << Q
_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class FloatAffine:
    """Per-map batch-norm parameters: y = gamma*(x - mu)/sigma + beta."""

    gamma: float
    mu: float
    sigma: float
    beta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise BpbnError(f"sigma must be positive, got {self.sigma}")

    def scale_bias(self) -> tuple[float, float]:
        """Folded (a, b) with y = a*x + b."""
        a = self.gamma / self.sigma
        return a, self.beta - a * self.mu

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.gamma * (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma + self.beta

    @classmethod
    def identity(cls) -> "FloatAffine":
        return cls(1.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class FixedAffine:
    """Q16.16 affine y = scale*x + bias, evaluated in 64-bit integers."""

    scale_q16: int
    bias_q16: int

    def __post_init__(self):
        if abs(self.scale_q16) >= (1 << 31) or abs(self.bias_q16) >= (1 << 31):
            raise RangeOverflowError("Q16.16 parameter outside 32-bit range")

    @classmethod
    def from_scale_bias(cls, scale: float, bias: float) -> "FixedAffine":
        if not abs(scale) < 2**15:
            raise RangeOverflowError(f"|scale| {scale} not representable in Q16.16")
        return cls(int(round(scale * Q_ONE)), int(round(bias * Q_ONE)))

    @classmethod
    def from_bn(cls, p: FloatAffine) -> "FixedAffine":
        return cls.from_scale_bias(*p.scale_bias())

    @property
    def scale(self) -> float:
        return self.scale_q16 / Q_ONE

    @property
    def bias(self) -> float:
        return self.bias_q16 / Q_ONE

    @classmethod
    def identity(cls) -> "FixedAffine":
        return cls(Q_ONE, 0)


class BinaryKernel:
    """A bank of {-1,+1} convolution kernels packed per output map.

    Dense kernels have shape (F, F, Cin, O); depthwise kernels have shape
    (F, F, C, N) where every input channel c gets its own N maps and the
    output channel order is c-major, n-minor.  F must be odd.  Each map's
    weights are packed in (fh, fw, c) order, matching the bit-level im2col
    row layout, so window and kernel words line up exactly.
    """

    def __init__(self, weights: np.ndarray, bias=None, depthwise: bool = False):
        weights = np.asarray(weights)
        if weights.ndim != 4:
            raise ShapeError(f"kernel must be rank-4, got shape {weights.shape}")
        f, f2, cin, omaps = weights.shape
        if f != f2:
            raise ShapeError(f"kernel window must be square, got {f}x{f2}")
        if f % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {f}")
        if not np.isin(weights, (-1, 1)).all():
            raise ShapeError("kernel weights must be strictly +-1")
        self.f = f
        self.in_channels = cin
        self.depthwise = bool(depthwise)
        self.out_maps = cin * omaps if depthwise else omaps
        self.multiplier = omaps if depthwise else None
        self.weights = np.ascontiguousarray(weights, dtype=np.int8)
        self.weights.flags.writeable = False
        if bias is None:
            bias = np.zeros(self.out_maps, dtype=np.int32)
        bias = np.asarray(bias, dtype=np.int32).reshape(-1)
        if bias.size != self.out_maps:
            raise ShapeError(
                f"expected {self.out_maps} bias entries, got {bias.size}"
            )
        self.bias = bias
        self.bias.flags.writeable = False
        if depthwise:
            # per (c, n): pack the (F, F) window, one row per map
            rows = (
                (self.weights == -1)
                .astype(np.uint8)
                .transpose(2, 3, 0, 1)
                .reshape(cin * omaps, f * f)
            )
        else:
            # per map o: pack (F, F, Cin) in (fh, fw, c) order
            rows = (
                (self.weights == -1)
                .astype(np.uint8)
                .transpose(3, 0, 1, 2)
                .reshape(omaps, f * f * cin)
            )
        self.packed_maps = _pack_rows(rows)
        self.packed_maps.flags.writeable = False
        self.window_bits = rows.shape[1]

    @property
    def maps(self) -> list[PackedBitTensor]:
        """Per-map packed views (dims (F, F, 1) depthwise, (F, F, Cin) dense)."""
        dims = (self.f, self.f, 1 if self.depthwise else self.in_channels)
        return [
            PackedBitTensor(dims, self.packed_maps[i].copy())
            for i in range(self.out_maps)
        ]


def _pack_rows(rows: np.ndarray) -> np.ndarray:
    """Pack a (R, nbits) 0/1 matrix into (R, nwords) uint64, LSB-first."""
    r, nbits = rows.shape
    nwords = (nbits + 63) // 64
    by = np.packbits(rows, axis=1, bitorder="little")
    padded = np.zeros((r, nwords * 8), dtype=np.uint8)
    padded[:, : by.shape[1]] = by
    return padded.view("<u8").astype(np.uint64)


def _window_rows(bits: np.ndarray, f: int, padding: str) -> tuple[np.ndarray, int, int]:
    """Bit-level im2col: (H', W') windows flattened to (R, F*F*C) rows.

    Pads with bit 0 (bipolar +1) in "same" mode.
    """
    if padding == "same":
        p = (f - 1) // 2
        bits = np.pad(bits, ((p, p), (p, p), (0, 0)))
    elif padding != "valid":
        raise ShapeError(f"unknown padding {padding!r}")
    h, w, c = bits.shape
    if h < f or w < f:
        raise ShapeError(f"input {h}x{w} smaller than kernel {f}x{f}")
    win = sliding_window_view(bits, (f, f), axis=(0, 1))  # (H', W', C, F, F)
    oh, ow = win.shape[:2]
    rows = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, f * f * c)
    return np.ascontiguousarray(rows), oh, ow


def _xor_popcount_dots(
    row_words: np.ndarray, map_words: np.ndarray, nbits: int, threads: int
) -> np.ndarray:
    """All (row, map) bipolar dots: nbits - 2*popcount(row ^ map)."""
    r = row_words.shape[0]
    o = map_words.shape[0]
    out = np.empty((r, o), dtype=np.int32)

    def run(lo: int, hi: int) -> None:
        x = row_words[:, None, :] ^ map_words[None, lo:hi, :]
        out[:, lo:hi] = nbits - 2 * popcount_words(x).sum(axis=-1)

    if threads > 1 and o > 1:
        step = -(-o // threads)
        spans = [(i, min(i + step, o)) for i in range(0, o, step)]
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(lambda s: run(*s), spans))
    else:
        run(0, o)
    return out


def binary_conv2d(
    inp: PackedBitTensor,
    kernel: BinaryKernel,
    padding: str = "valid",
    threads: int = 1,
) -> np.ndarray:
    """XNOR-popcount 2D convolution; returns an int32 (H', W', O) tensor.

    Dense: every output map sees all input channels; |out| <= F^2*Cin+|bias|.
    Depthwise: each input channel is convolved with its own N maps and the
    output channels are ordered c-major, n-minor; |out| <= F^2 + |bias|.
    """
    h, w, c = inp.dims
    bits = inp.bits()
    f = kernel.f
    if kernel.depthwise:
        if kernel.in_channels != c:
            raise ShapeError(
                f"depthwise kernel has {kernel.in_channels} channels, input has {c}"
            )
        n = kernel.multiplier
        per_channel = []
        for ch in range(c):
            rows, oh, ow = _window_rows(bits[:, :, ch : ch + 1], f, padding)
            rw = _pack_rows(rows)
            km = kernel.packed_maps[ch * n : (ch + 1) * n]
            dots = _xor_popcount_dots(rw, km, f * f, threads)
            dots += kernel.bias[ch * n : (ch + 1) * n]
            per_channel.append(dots.reshape(oh, ow, n))
        return np.concatenate(per_channel, axis=2).astype(np.int32)
    if kernel.in_channels != c:
        raise ShapeError(
            f"kernel expects {kernel.in_channels} input channels, input has {c}"
        )
    rows, oh, ow = _window_rows(bits, f, padding)
    rw = _pack_rows(rows)
    dots = _xor_popcount_dots(rw, kernel.packed_maps, kernel.window_bits, threads)
    dots += kernel.bias[None, :]
    return dots.reshape(oh, ow, kernel.out_maps).astype(np.int32)


def binary_dense(inp: PackedBitTensor, kernel: BinaryKernel, threads: int = 1) -> np.ndarray:
    """Fully-connected XNOR-popcount layer over the flattened input.

    The kernel is a 1x1 dense bank whose in_channels equal the flattened
    element count; output is int32 of shape (1, 1, O).
    """
    if kernel.depthwise or kernel.f != 1:
        raise ShapeError("dense kernel must be 1x1 and not depthwise")
    n = inp.size
    if kernel.in_channels != n:
        raise ShapeError(f"dense kernel expects {kernel.in_channels} inputs, got {n}")
    flat = inp.flat()
    dots = _xor_popcount_dots(
        flat.words[None, :], kernel.packed_maps, n, threads
    )
    return (dots[0] + kernel.bias).reshape(1, 1, kernel.out_maps).astype(np.int32)


def affine_fixed(x: np.ndarray, p: FixedAffine) -> np.ndarray:
    """Apply one Q16.16 affine to an integer tensor; result is Q16.16 int32.

    Inputs must obey |x| <= 2^14 (the conv bound guarantees it); the 64-bit
    product is range-checked into 32 bits and overflow is rejected.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ShapeError(f"fixed affine needs integer input, got {x.dtype}")
    if x.size and int(np.abs(x, dtype=np.int64).max()) > 2**14:
        raise RangeOverflowError("affine input exceeds |x| <= 2^14 bound")
    y = x.astype(np.int64) * p.scale_q16 + p.bias_q16
    return _check_i32(y, "fixed affine output")


def affine_fixed_per_map(x: np.ndarray, params: list[FixedAffine]) -> np.ndarray:
    """Vectorized per-channel :func:`affine_fixed` over the last axis."""
    x = np.asarray(x)
    if x.shape[-1] != len(params):
        raise ShapeError(f"{len(params)} affines for {x.shape[-1]} maps")
    if x.size and int(np.abs(x, dtype=np.int64).max()) > 2**14:
        raise RangeOverflowError("affine input exceeds |x| <= 2^14 bound")
    scales = np.array([p.scale_q16 for p in params], dtype=np.int64)
    biases = np.array([p.bias_q16 for p in params], dtype=np.int64)
    y = x.astype(np.int64) * scales + biases
    return _check_i32(y, "fixed affine output")


def _check_i32(y: np.ndarray, what: str) -> np.ndarray:
    if y.size and (int(y.max()) > _I32_MAX or int(y.min()) < _I32_MIN):
        raise RangeOverflowError(f"{what} overflows 32-bit range")
    return y.astype(np.int32)


def fold_bn_to_threshold(p: FloatAffine) -> tuple[int, int]:
    """Fold batch-norm + sign into an integer threshold compare.

    Returns (threshold, polarity) with, for every integer x,

        sign(gamma*(x - mu)/sigma + beta) == polarity * (+1 if x >= threshold else -1)

    where sign(0) = +1.  The algebraic candidate is calibrated against the
    float predicate at the cut so agreement is exact, not merely within
    rounding, for all integers.
    """
    if p.gamma == 0:
        raise BpbnError("gamma = 0: degenerate batch norm cannot be folded")

    def pos(x: int) -> bool:
        return p.gamma * (float(x) - p.mu) / p.sigma + p.beta >= 0.0

    cut = p.mu - p.beta * p.sigma / p.gamma
    if p.gamma > 0:
        # y is non-decreasing: threshold = least integer with y >= 0
        t = math.ceil(cut)
        for _ in range(64):
            if not pos(t):
                t += 1
            elif pos(t - 1):
                t -= 1
            else:
                return t, 1
        raise BpbnError("threshold calibration did not converge")
    # gamma < 0: y is non-increasing; +1 exactly for x < t
    t = math.floor(cut) + 1
    for _ in range(64):
        if not pos(t - 1):
            t -= 1
        elif pos(t):
            t += 1
        else:
            return t, -1
    raise BpbnError("threshold calibration did not converge")


def sign_to_bits(x: np.ndarray) -> PackedBitTensor:
    """Binarize an accumulator tensor: >= 0 -> +1 (bit 0), < 0 -> -1 (bit 1)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected rank-3 tensor, got shape {x.shape}")
    return PackedBitTensor.from_bits((x < 0).astype(np.uint8))


def threshold_to_bits(x: np.ndarray, thresholds, polarities) -> PackedBitTensor:
    """Per-map folded BN+sign: bit set (-1) where polarity*(x >= t) says so."""
    x = np.asarray(x)
    t = np.asarray(thresholds, dtype=np.int64).reshape(1, 1, -1)
    pol = np.asarray(polarities, dtype=np.int64).reshape(1, 1, -1)
    if x.shape[-1] != t.shape[-1] or t.shape != pol.shape:
        raise ShapeError("one (threshold, polarity) pair per map required")
    plus = np.where(pol > 0, x >= t, x < t)
    return PackedBitTensor.from_bits((~plus).astype(np.uint8))


def maxpool2(x: np.ndarray | PackedBitTensor):
    """2x2 stride-2 max pooling on accumulators or packed bits.

    On bits the bipolar order (+1 > -1) makes the pooled bit the AND of the
    four input bits: the result is -1 only if all four are -1.
    """
    if isinstance(x, PackedBitTensor):
        h, w, c = x.dims
        _check_even(h, w)
        bits = x.bits().reshape(h // 2, 2, w // 2, 2, c).min(axis=(1, 3))
        return PackedBitTensor.from_bits(bits)
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected rank-3 tensor, got shape {x.shape}")
    h, w, c = x.shape
    _check_even(h, w)
    return x.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))


def _check_even(h: int, w: int) -> None:
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even dims, got {h}x{w}")


def int8_conv2d(
    img: np.ndarray,
    weights: np.ndarray,
    bias=None,
    padding: str = "same",
) -> np.ndarray:
    """Plain int8 convolution with 32-bit accumulation (baseline first layer).

    weights: (F, F, C, O) signed 8-bit, bias: i32 per map, zero padding.
    """
    img = np.asarray(img)
    weights = np.asarray(weights)
    if img.ndim != 3 or weights.ndim != 4:
        raise ShapeError("int8 conv expects (H,W,C) image and (F,F,C,O) weights")
    f, f2, c, o = weights.shape
    if f != f2 or f % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {f}x{f2}")
    if img.shape[2] != c:
        raise ShapeError(f"weights expect {c} channels, image has {img.shape[2]}")
    if weights.dtype != np.int8:
        if np.abs(weights).max(initial=0) > 127:
            raise ShapeError("weights exceed int8 range")
        weights = weights.astype(np.int8)
    if bias is None:
        bias = np.zeros(o, dtype=np.int32)
    bias = np.asarray(bias, dtype=np.int32).reshape(-1)
    if bias.size != o:
        raise ShapeError(f"expected {o} bias entries, got {bias.size}")
    x = img.astype(np.int64)
    if padding == "same":
        p = (f - 1) // 2
        x = np.pad(x, ((p, p), (p, p), (0, 0)))
    elif padding != "valid":
        raise ShapeError(f"unknown padding {padding!r}")
    if x.shape[0] < f or x.shape[1] < f:
        raise ShapeError("input smaller than kernel")
    win = sliding_window_view(x, (f, f), axis=(0, 1))  # (H', W', C, F, F)
    acc = np.einsum(
        "hwcij,ijco->hwo", win, weights.astype(np.int64), optimize=True
    ) + bias
    return _check_i32(acc, "int8 conv output")
