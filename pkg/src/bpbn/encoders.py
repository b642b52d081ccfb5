"""Input encoders: bit-plane rearrangement and the comparison schemes.

An 8-bit pixel p = sum_m x_m * 2^m is split into per-bit planes.  The
rearrangement keeps each (channel, bit position) plane separate for the
depthwise pipeline; the comparison encoders flatten everything into one
wide binary tensor:

* DBID - one binary channel per (channel, bit), c-major / bit-minor.
* BIL  - DBID followed by a binary 1x1 convolution expanding to K channels.
* thermometer - K monotone threshold channels per input channel.

Bits are stored under the engine-wide bipolar convention: a set pixel bit
becomes a set packed bit, i.e. bipolar -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensors import PackedBitTensor, as_byte_tensor
from .binops import (
    BinaryKernel,
    FixedAffine,
    affine_fixed_per_map,
    binary_conv2d,
    sign_to_bits,
)

__all__ = [
    "BitPlaneStack",
    "bit_rearrange",
    "encode_dbid",
    "encode_thermometer",
    "thermometer_thresholds",
    "encode_bil",
]

PIXEL_BITS = 8


@dataclass(frozen=True)
class BitPlaneStack:
    """Per-(channel, bit position) planes of an 8-bit image.

    ``plane(c, bp)`` is an (H, W, 1) packed tensor whose set bits mark the
    pixels whose bit ``bp`` is set; ``bit_positions`` are the true positions
    in the pixel's binary expansion (ascending), so a 4-plane stack taken
    from the high end carries positions (4, 5, 6, 7).
    """

    source_dims: tuple[int, int, int]
    bit_positions: tuple[int, ...]
    planes: dict[tuple[int, int], PackedBitTensor]

    @property
    def channels(self) -> int:
        return self.source_dims[2]

    def plane(self, c: int, bp: int) -> PackedBitTensor:
        return self.planes[(c, bp)]


def _check_planes(p: int) -> None:
    if not 1 <= p <= PIXEL_BITS:
        raise ShapeError(f"plane count must be in 1..8, got {p}")


def _selected_positions(p: int, select_highest: bool) -> tuple[int, ...]:
    if select_highest:
        return tuple(range(PIXEL_BITS - p, PIXEL_BITS))
    return tuple(range(p))


def bit_rearrange(
    img: np.ndarray, planes: int = PIXEL_BITS, select_highest: bool = True
) -> BitPlaneStack:
    """Rearrange an (H, W, C) byte image into per-channel bit planes.

    With ``select_highest`` the P planes cover bit positions {8-P, ..., 7};
    spatially coherent information lives in the high bits, so partial
    selections always prefer them.
    """
    img = as_byte_tensor(img)
    _check_planes(planes)
    h, w, c = img.shape
    positions = _selected_positions(planes, select_highest)
    out: dict[tuple[int, int], PackedBitTensor] = {}
    for ch in range(c):
        chan = img[:, :, ch]
        for bp in positions:
            bits = ((chan >> bp) & 1).astype(np.uint8).reshape(h, w, 1)
            out[(ch, bp)] = PackedBitTensor.from_bits(bits)
    return BitPlaneStack((h, w, c), positions, out)


def encode_dbid(
    img: np.ndarray, planes: int = PIXEL_BITS, select_highest: bool = True
) -> PackedBitTensor:
    """Direct unpacking of the fixed-point input: C*P binary channels.

    Channel order is c-major / bit-minor (ascending bit position within a
    channel block), so all planes of one color channel stay contiguous.
    """
    img = as_byte_tensor(img)
    _check_planes(planes)
    h, w, c = img.shape
    positions = _selected_positions(planes, select_highest)
    shifts = np.array(positions, dtype=np.uint8)
    # (H, W, C, P) bit values -> (H, W, C*P)
    bits = (img[..., None] >> shifts) & 1
    return PackedBitTensor.from_bits(bits.reshape(h, w, c * planes))


def thermometer_thresholds(k: int) -> np.ndarray:
    """Evenly spaced ceiling thresholds t_j = ceil((j+1)*256/(K+1))."""
    if k < 1:
        raise ShapeError(f"expansion factor must be >= 1, got {k}")
    j = np.arange(1, k + 1, dtype=np.int64)
    return -(-(j * 256) // (k + 1))


def encode_thermometer(img: np.ndarray, k: int) -> PackedBitTensor:
    """Thermometer encoding: channel j of pixel p is set iff p >= t_j.

    Produces C*K channels (c-major, threshold-minor); the set-channel count
    is non-decreasing in the pixel value.
    """
    img = as_byte_tensor(img)
    t = thermometer_thresholds(k)
    h, w, c = img.shape
    bits = (img[..., None].astype(np.int64) >= t).astype(np.uint8)
    return PackedBitTensor.from_bits(bits.reshape(h, w, c * k))


def encode_bil(
    img: np.ndarray,
    planes: int,
    pw_weights: BinaryKernel,
    bn: list[FixedAffine],
    select_highest: bool = True,
) -> PackedBitTensor:
    """DBID followed by a binary pointwise expansion to K channels.

    The 1x1 kernel must be a dense (1, 1, C*P, K) bank; each map's integer
    dot is passed through its Q16.16 affine and binarized by sign.
    """
    dbid = encode_dbid(img, planes, select_highest)
    cp = dbid.dims[2]
    if pw_weights.depthwise or pw_weights.f != 1:
        raise ShapeError("BIL expects a dense 1x1 kernel")
    if pw_weights.in_channels != cp:
        raise ShapeError(
            f"pointwise kernel expects {pw_weights.in_channels} channels, "
            f"DBID produced {cp}"
        )
    if len(bn) != pw_weights.out_maps:
        raise ShapeError(
            f"expected {pw_weights.out_maps} affines, got {len(bn)}"
        )
    acc = binary_conv2d(dbid, pw_weights, padding="valid")
    return sign_to_bits(affine_fixed_per_map(acc, bn))
