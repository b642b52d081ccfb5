"""Bit-plane input block: extract, re-weight, fuse.

Pipeline per 8-bit input channel c:

1. each selected bit plane (c, bp) goes through a binary depthwise
   convolution producing N maps, each followed by its batch-norm affine;
2. every map of plane bp is re-weighted by 2^bp -- a left shift, exact by
   construction -- so high bit planes dominate;
3. the shifted maps are summed over bp into N fused maps per channel,
   64-bit accumulation range-checked into int32.

With P < 8 planes the shifts keep the TRUE bit positions (e.g. 4..7), so
the fused value preserves the numeric weight of the pixel expansion.  The
fused volume has N*C channels (c-major, n-minor) regardless of P and can
either stay an accumulator tensor or be reduced to sign bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeOverflowError, ShapeError
from .tensors import PackedBitTensor, as_byte_tensor
from .binops import (
    BinaryKernel,
    FixedAffine,
    FloatAffine,
    affine_fixed_per_map,
    binary_conv2d,
    sign_to_bits,
)
from .encoders import BitPlaneStack, bit_rearrange

__all__ = ["BpieConfig", "BpieWeights", "feature_extract", "reweight", "fuse", "bpie_forward"]

_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1
REWEIGHT_HEADROOM = 2**24  # |v| bound leaving room for shifts up to 2^7


@dataclass(frozen=True)
class BpieConfig:
    """Input-block hyperparameters.

    planes: P bit planes (highest P positions); multiplier: N depthwise maps
    per (channel, plane); affine_mode selects the Q16.16 or float batch-norm
    path; fuse_output "accum" keeps int32 maps, "sign-bits" binarizes them.
    """

    planes: int = 8
    multiplier: int = 1
    affine_mode: str = "fixed"
    fuse_output: str = "accum"
    select_highest: bool = True

    def __post_init__(self):
        if not 1 <= self.planes <= 8:
            raise ShapeError(f"plane count must be in 1..8, got {self.planes}")
        if self.multiplier < 1:
            raise ShapeError(f"multiplier must be >= 1, got {self.multiplier}")
        if self.affine_mode not in ("fixed", "float"):
            raise ShapeError(f"unknown affine mode {self.affine_mode!r}")
        if self.fuse_output not in ("accum", "sign-bits"):
            raise ShapeError(f"unknown fuse output {self.fuse_output!r}")


@dataclass
class BpieWeights:
    """Per-(channel, plane) depthwise kernels and per-map affines.

    kernels[(c, bp)] is an (F, F, 1, N) depthwise bank; affines[(c, bp)]
    holds one FloatAffine per map n, folded once into Q16.16.
    """

    kernels: dict[tuple[int, int], BinaryKernel]
    affines: dict[tuple[int, int], list[FloatAffine]]
    fixed_affines: dict[tuple[int, int], list[FixedAffine]] = field(default=None, repr=False)

    def __post_init__(self):
        if set(self.kernels) != set(self.affines):
            raise ShapeError("kernel and affine tables cover different planes")
        for key, k in self.kernels.items():
            if not k.depthwise or k.in_channels != 1:
                raise ShapeError(f"plane {key} kernel must be single-channel depthwise")
            if len(self.affines[key]) != k.out_maps:
                raise ShapeError(f"plane {key}: one affine per map required")
        if self.fixed_affines is None:
            self.fixed_affines = {
                key: [FixedAffine.from_bn(a) for a in affs]
                for key, affs in self.affines.items()
            }

    @classmethod
    def from_arrays(cls, weights: np.ndarray, affines: np.ndarray) -> "BpieWeights":
        """Build from (C, P, F, F, N) +-1 weights and (C, P, N, 4) BN rows.

        Plane index axis runs over ascending selected bit positions; BN rows
        are (gamma, mu, sigma, beta).
        """
        c, p, f, _, n = weights.shape
        kernels = {}
        affs = {}
        for ci in range(c):
            for pi in range(p):
                kernels[(ci, pi)] = BinaryKernel(
                    weights[ci, pi].reshape(f, f, 1, n), depthwise=True
                )
                affs[(ci, pi)] = [FloatAffine(*affines[ci, pi, ni]) for ni in range(n)]
        return cls(kernels, affs)

    def rekey(self, positions: tuple[int, ...]) -> "BpieWeights":
        """Map dense plane indices 0..P-1 onto true bit positions."""
        kernels = {}
        affs = {}
        for (c, pi), k in self.kernels.items():
            kernels[(c, positions[pi])] = k
            affs[(c, positions[pi])] = self.affines[(c, pi)]
        return BpieWeights(kernels, affs)

    @classmethod
    def identity_stub(cls, channels: int, planes: int = 8, flip: bool = True) -> "BpieWeights":
        """1x1 single-map kernels with identity affine, for reconstruction
        checks: a -1 weight turns a set plane bit into +1."""
        w = np.full((channels, planes, 1, 1, 1), -1 if flip else 1, dtype=np.int8)
        a = np.tile(np.array([1.0, 0.0, 1.0, 0.0]), (channels, planes, 1, 1))
        return cls.from_arrays(w, a)


def feature_extract(
    stack: BitPlaneStack,
    weights: BpieWeights,
    cfg: BpieConfig,
    threads: int = 1,
) -> dict[tuple[int, int], np.ndarray]:
    """Binary depthwise conv + batch-norm affine for every (c, bp) plane.

    Returns (H, W, N) maps per plane: Q16.16 int32 in fixed mode, float64 in
    float mode.  "Same" padding keeps the raster size so fused maps can
    replace a same-padded first conv layer.
    """
    if len(stack.bit_positions) != cfg.planes:
        raise ShapeError(
            f"stack carries {len(stack.bit_positions)} planes, config wants {cfg.planes}"
        )
    needed = {(c, bp) for c in range(stack.channels) for bp in stack.bit_positions}
    if not needed <= set(weights.kernels):
        missing = sorted(needed - set(weights.kernels))[0]
        raise ShapeError(f"weights missing plane {missing}")
    out: dict[tuple[int, int], np.ndarray] = {}
    for c in range(stack.channels):
        for bp in stack.bit_positions:
            k = weights.kernels[(c, bp)]
            if k.out_maps != cfg.multiplier:
                raise ShapeError(
                    f"plane ({c},{bp}) has {k.out_maps} maps, config wants {cfg.multiplier}"
                )
            acc = binary_conv2d(stack.plane(c, bp), k, padding="same", threads=threads)
            if cfg.affine_mode == "fixed":
                out[(c, bp)] = affine_fixed_per_map(acc, weights.fixed_affines[(c, bp)])
            else:
                maps = np.empty(acc.shape, dtype=np.float64)
                for n, aff in enumerate(weights.affines[(c, bp)]):
                    maps[:, :, n] = aff.apply(acc[:, :, n])
                out[(c, bp)] = maps
    return out


def reweight(maps: np.ndarray, bp: int) -> np.ndarray:
    """Multiply a plane's maps by 2^bp via left shift (exact).

    Integer inputs must satisfy |v| < 2^24 so a shift by up to 7 cannot
    leave the 32-bit range; float inputs are multiplied directly.
    """
    if not 0 <= bp <= 7:
        raise ShapeError(f"bit position must be in 0..7, got {bp}")
    maps = np.asarray(maps)
    if np.issubdtype(maps.dtype, np.floating):
        return maps * float(2**bp)
    if maps.size and int(np.abs(maps, dtype=np.int64).max()) >= REWEIGHT_HEADROOM:
        raise RangeOverflowError("re-weight input exceeds |v| < 2^24 headroom")
    return (maps.astype(np.int64) << bp).astype(np.int64)


def fuse(
    reweighted: dict[tuple[int, int], np.ndarray],
    cfg: BpieConfig,
    channels: int | None = None,
):
    """Sum re-weighted maps over bit planes; concatenate channels c-major.

    Integer sums run in 64 bits and are range-checked into int32; float maps
    are summed in float64.  With fuse_output "sign-bits" the result is
    binarized (>= 0 -> +1).
    """
    if not reweighted:
        raise ShapeError("nothing to fuse")
    maps = {key: np.asarray(m) for key, m in reweighted.items()}
    is_float = np.issubdtype(next(iter(maps.values())).dtype, np.floating)
    if any(np.issubdtype(m.dtype, np.floating) != is_float for m in maps.values()):
        raise ShapeError("mixed float/integer maps in fusion")
    chans = sorted({c for c, _ in maps})
    if channels is not None and chans != list(range(channels)):
        raise ShapeError(f"expected planes for channels 0..{channels - 1}")
    positions = sorted({bp for _, bp in maps})
    per_channel = []
    for c in chans:
        stack = []
        for bp in positions:
            if (c, bp) not in maps:
                raise ShapeError(f"channel {c} is missing plane {bp}")
            stack.append(maps[(c, bp)])
        if is_float:
            per_channel.append(np.sum(stack, axis=0, dtype=np.float64))
        else:
            total = np.sum([m.astype(np.int64) for m in stack], axis=0, dtype=np.int64)
            if total.size and (
                int(total.max()) > _I32_MAX or int(total.min()) < _I32_MIN
            ):
                raise RangeOverflowError("fused value overflows 32-bit range")
            per_channel.append(total.astype(np.int32))
    fused = np.concatenate(per_channel, axis=2)
    if cfg.fuse_output == "sign-bits":
        if is_float:
            return PackedBitTensor.from_bits((fused < 0).astype(np.uint8))
        return sign_to_bits(fused)
    return fused


def bpie_forward(
    img: np.ndarray,
    weights: BpieWeights,
    cfg: BpieConfig,
    threads: int = 1,
):
    """Full input block: rearrange -> extract -> re-weight -> fuse."""
    img = as_byte_tensor(img)
    stack = bit_rearrange(img, cfg.planes, cfg.select_highest)
    fe = feature_extract(stack, weights, cfg, threads=threads)
    shifted = {key: reweight(maps, key[1]) for key, maps in fe.items()}
    return fuse(shifted, cfg, channels=img.shape[2])
