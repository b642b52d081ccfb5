"""Packed-bit, byte and integer tensor representations.

The engine moves three kinds of rank-3 (H, W, C) tensors around:

* ``PackedBitTensor`` -- bipolar {-1,+1} data stored one bit per element in
  64-bit words.  Bit 1 encodes -1 and bit 0 encodes +1, so a freshly zeroed
  word is an all-(+1) vector and the XNOR trick reads off the bipolar dot
  product directly.
* byte tensors -- ``uint8`` arrays, the raw image side of the world.
* accumulator tensors -- ``int32`` arrays holding convolution sums (and,
  after a fixed-point affine, Q16.16 values).

Packing layout: elements are flattened row-major with the channel index
minor (C order over (H, W, C)), then packed least-significant-bit first
into 64-bit words; the tail of the last word is zero-padded.  Producers
must emit canonical (zero-padded) words; consumers may assume it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PackingError, ShapeError

__all__ = [
    "PackedBitTensor",
    "pack_bipolar",
    "unpack_bipolar",
    "popcount_xor_dot",
    "as_byte_tensor",
    "as_accum_tensor",
    "read_tensor",
    "write_tensor",
]

WORD_BITS = 64

# uint64 popcount: numpy >= 2.0 ships bitwise_count; keep an 8-bit LUT
# fallback so the package still runs on 1.x.
if hasattr(np, "bitwise_count"):

    def _popcount_words(words: np.ndarray) -> np.ndarray:
        return np.bitwise_count(words).astype(np.int64)

else:  # pragma: no cover - exercised only on old numpy
    _POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount_words(words: np.ndarray) -> np.ndarray:
        by = words.astype("<u8").reshape(-1).view(np.uint8)
        return (
            _POP8[by].reshape(*words.shape, 8).sum(axis=-1, dtype=np.int64)
        )


def popcount_words(words: np.ndarray) -> np.ndarray:
    """Per-word population count of a uint64 array (any shape)."""
    return _popcount_words(np.ascontiguousarray(words, dtype=np.uint64))


def pack_bits_lsb(bits: np.ndarray) -> np.ndarray:
    """Pack a flat 0/1 uint8 array into uint64 words, LSB-first.

    The tail is zero-padded to a whole word.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8).reshape(-1)
    nwords = (bits.size + WORD_BITS - 1) // WORD_BITS
    by = np.packbits(bits, bitorder="little")
    out = np.zeros(nwords * 8, dtype=np.uint8)
    out[: by.size] = by
    return out.view("<u8").astype(np.uint64)


def unpack_bits_lsb(words: np.ndarray, count: int) -> np.ndarray:
    """Inverse of :func:`pack_bits_lsb`; returns `count` 0/1 uint8 values."""
    by = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(by, count=count, bitorder="little")


@dataclass(frozen=True)
class PackedBitTensor:
    """Bipolar rank-3 tensor, one bit per element (bit 1 means -1).

    Immutable after construction; the word buffer is marked read-only.
    """

    dims: tuple[int, int, int]
    words: np.ndarray = field(repr=False)

    def __post_init__(self):
        h, w, c = self.dims
        if h <= 0 or w <= 0 or c <= 0:
            raise ShapeError(f"non-positive dims {self.dims}")
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 1 or words.size != self.word_count:
            raise PackingError(
                f"expected {self.word_count} words for dims {self.dims}, "
                f"got {words.size}"
            )
        pad = self.size % WORD_BITS
        if pad and int(words[-1] >> np.uint64(pad)) != 0:
            raise PackingError("nonzero padding bits (non-canonical tensor)")
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    @property
    def size(self) -> int:
        h, w, c = self.dims
        return h * w * c

    @property
    def word_count(self) -> int:
        return (self.size + WORD_BITS - 1) // WORD_BITS

    def bits(self) -> np.ndarray:
        """0/1 uint8 array of shape (H, W, C); 1 marks a stored -1."""
        return unpack_bits_lsb(self.words, self.size).reshape(self.dims)

    def reshape(self, dims: tuple[int, int, int]) -> "PackedBitTensor":
        """Reinterpret the same flat bit string under new dims."""
        h, w, c = dims
        if h * w * c != self.size:
            raise ShapeError(f"cannot reshape {self.dims} -> {dims}")
        return PackedBitTensor(dims, self.words)

    def flat(self) -> "PackedBitTensor":
        return self.reshape((1, 1, self.size))

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "PackedBitTensor":
        """Build from a (H, W, C) 0/1 array (1 means -1)."""
        if bits.ndim != 3:
            raise ShapeError(f"expected rank-3 bits, got shape {bits.shape}")
        return cls(tuple(bits.shape), pack_bits_lsb(bits))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedBitTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.words, other.words)


def pack_bipolar(src: np.ndarray) -> PackedBitTensor:
    """Pack a rank-3 array of {-1, +1} integers into bits (-1 -> bit 1).

    Rejects any element outside {-1, +1}, reporting the flat index of the
    first offender.
    """
    src = np.asarray(src)
    if src.ndim != 3:
        raise ShapeError(f"expected rank-3 input, got shape {src.shape}")
    flat = src.reshape(-1)
    bad = np.flatnonzero((flat != 1) & (flat != -1))
    if bad.size:
        i = int(bad[0])
        raise PackingError(f"element {flat[i]!r} at flat index {i} is not +-1")
    return PackedBitTensor.from_bits((src == -1).astype(np.uint8))


def unpack_bipolar(src: PackedBitTensor) -> np.ndarray:
    """Inverse of :func:`pack_bipolar`; returns int8 {-1,+1} of shape dims."""
    return (1 - 2 * src.bits().astype(np.int8)).astype(np.int8)


def popcount_xor_dot(a: PackedBitTensor, b: PackedBitTensor) -> int:
    """Bipolar dot product via the XNOR trick: n - 2*popcount(a ^ b).

    Both operands must share the same layout (equal dims).  With canonical
    zero padding the padded region XORs to zero and never perturbs the
    count, so whole words can be processed without masking.
    """
    if a.dims != b.dims:
        raise PackingError(f"layout mismatch: {a.dims} vs {b.dims}")
    differ = int(popcount_words(np.bitwise_xor(a.words, b.words)).sum())
    return a.size - 2 * differ


def as_byte_tensor(arr: np.ndarray) -> np.ndarray:
    """Validate an (H, W, C) uint8 image tensor."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ShapeError(f"expected rank-3 byte tensor, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ShapeError(f"byte tensor must be integer, got {arr.dtype}")
        if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
            raise ShapeError("byte tensor values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_accum_tensor(arr: np.ndarray) -> np.ndarray:
    """Validate an (H, W, C) int32 accumulator tensor."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ShapeError(f"expected rank-3 accum tensor, got shape {arr.shape}")
    if arr.dtype != np.int32:
        info = np.iinfo(np.int32)
        if arr.min(initial=0) < info.min or arr.max(initial=0) > info.max:
            raise ShapeError("accum tensor exceeds int32 range")
        arr = arr.astype(np.int32)
    return arr


# ---------------------------------------------------------------------------
# Raw tensor file format ("BPT1")
#
#   magic   4 bytes  b"BPT1"
#   dtype   u8       0 = packed-bit, 1 = u8, 2 = i32
#   dims    3 x u32  little-endian (H, W, C)
#   payload          packed words as little-endian u64, raw bytes, or
#                    little-endian i32, per dtype
# ---------------------------------------------------------------------------

TENSOR_MAGIC = b"BPT1"
DTYPE_PACKED = 0
DTYPE_U8 = 1
DTYPE_I32 = 2

_HEADER = np.dtype([("magic", "S4"), ("tag", "u1"), ("dims", "<u4", 3)])


def write_tensor(obj: PackedBitTensor | np.ndarray) -> bytes:
    """Serialize a tensor to BPT1 bytes."""
    if isinstance(obj, PackedBitTensor):
        tag, dims = DTYPE_PACKED, obj.dims
        payload = obj.words.astype("<u8").tobytes()
    else:
        arr = np.asarray(obj)
        if arr.ndim != 3:
            raise ShapeError(f"expected rank-3 tensor, got shape {arr.shape}")
        dims = arr.shape
        if arr.dtype == np.uint8:
            tag, payload = DTYPE_U8, arr.tobytes()
        elif arr.dtype == np.int32:
            tag, payload = DTYPE_I32, arr.astype("<i4").tobytes()
        else:
            raise ShapeError(f"unsupported tensor dtype {arr.dtype}")
    head = np.zeros(1, dtype=_HEADER)
    head["magic"] = TENSOR_MAGIC
    head["tag"] = tag
    head["dims"] = dims
    return head.tobytes() + payload


def read_tensor(data: bytes) -> PackedBitTensor | np.ndarray:
    """Parse BPT1 bytes back into a tensor."""
    if len(data) < _HEADER.itemsize:
        raise PackingError("tensor file truncated")
    head = np.frombuffer(data[: _HEADER.itemsize], dtype=_HEADER)[0]
    if bytes(head["magic"]) != TENSOR_MAGIC:
        raise PackingError(f"bad tensor magic {bytes(head['magic'])!r}")
    dims = tuple(int(d) for d in head["dims"])
    h, w, c = dims
    payload = data[_HEADER.itemsize :]
    tag = int(head["tag"])
    if tag == DTYPE_PACKED:
        nwords = (h * w * c + WORD_BITS - 1) // WORD_BITS
        if len(payload) != nwords * 8:
            raise PackingError("packed payload length mismatch")
        words = np.frombuffer(payload, dtype="<u8").astype(np.uint64)
        return PackedBitTensor(dims, words)
    if tag == DTYPE_U8:
        if len(payload) != h * w * c:
            raise PackingError("u8 payload length mismatch")
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()
    if tag == DTYPE_I32:
        if len(payload) != h * w * c * 4:
            raise PackingError("i32 payload length mismatch")
        return (
            np.frombuffer(payload, dtype="<i4").astype(np.int32).reshape(dims)
        )
    raise PackingError(f"unknown tensor dtype tag {tag}")


def write_tensor_file(path, obj: PackedBitTensor | np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(write_tensor(obj))


def read_tensor_file(path) -> PackedBitTensor | np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh.read())
