"""Export a trained toy net to the engine's "BPBN" model container.

This module implements the documented container and raw-tensor formats
independently (the trainer talks to the engine only through files and its
CLI): binarized weights go in bit-packed blobs, batch norms fold to
(gamma, running_mean, sqrt(running_var + eps), beta) affine rows, all
shapes are validated before a byte is written, and the metadata is
emitted in the canonical form (sorted keys, compact separators).

A minimal reader is included so tests can verify that every weight bit
and affine value survives the round trip.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .layers import sign
from .train import ToyNet

__all__ = ["export_model", "read_container", "unpack_bits"]

TENSOR_MAGIC = b"BPT1"
MODEL_MAGIC = b"BPBN"
MODEL_VERSION = 1


def pack_bits(bits: np.ndarray) -> bytes:
    """Flat 0/1 -> LSB-first 64-bit words, zero tail padding, LE bytes."""
    by = np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little")
    nwords = (bits.size + 63) // 64
    out = np.zeros(nwords * 8, dtype=np.uint8)
    out[: by.size] = by
    return out.tobytes()


def unpack_bits(payload: bytes, count: int) -> np.ndarray:
    return np.unpackbits(
        np.frombuffer(payload, dtype=np.uint8), count=count, bitorder="little"
    )


def tensor_packed(pm1: np.ndarray, dims) -> bytes:
    """A +-1 array as a packed-bit BPT1 tensor (bit 1 encodes -1)."""
    if not np.isin(pm1, (-1.0, 1.0)).all():
        raise ValueError("binarized weights must be strictly +-1")
    head = struct.pack("<4sB3I", TENSOR_MAGIC, 0, *dims)
    return head + pack_bits(pm1.reshape(-1) == -1)


def tensor_i32(arr: np.ndarray, dims) -> bytes:
    head = struct.pack("<4sB3I", TENSOR_MAGIC, 2, *dims)
    return head + np.asarray(arr, dtype="<i4").reshape(-1).tobytes()


def _affine_rows(rows: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.asarray(rows).reshape(-1, 4)]


def build_container(name, input_dims, layers, blobs: dict[str, bytes]) -> bytes:
    table = {}
    offset = 0
    for blob_name in sorted(blobs):
        data = blobs[blob_name]
        table[blob_name] = {
            "offset": offset,
            "size": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        }
        offset += len(data)
    meta = {
        "name": name,
        "input_dims": list(input_dims),
        "first_layer_mode": "with-F1",
        "layers": layers,
        "blobs": table,
    }
    body = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<HI", MODEL_VERSION, len(body))
    out += body
    for blob_name in sorted(blobs):
        out += blobs[blob_name]
    return bytes(out)


def export_model(net: ToyNet, path, name: str = "toy-bpie") -> None:
    """Binarize the net's weights and write the engine container.

    Shape consistency is checked before writing: inconsistent nets are
    rejected without touching the filesystem.
    """
    h, w, c = net.input_dims
    p, n, f = net.bpie.p, net.bpie.n, net.bpie.f
    if net.conv1.cin != c * n:
        raise ValueError(
            f"conv1 expects {net.conv1.cin} channels, input block makes {c * n}"
        )
    if net.conv2.cin != net.conv1.cout:
        raise ValueError("conv2 input channels do not match conv1 output")
    head_in = (h // 4) * (w // 4) * net.conv2.cout
    if net.head.w.shape[0] != head_in:
        raise ValueError(
            f"head expects {net.head.w.shape[0]} inputs, pipeline makes {head_in}"
        )
    if h % 4 or w % 4:
        raise ValueError("two pooling stages need input dims divisible by 4")

    blobs: dict[str, bytes] = {}

    def add_blob(data: bytes) -> str:
        blob_name = f"blob{len(blobs):03d}"
        blobs[blob_name] = data
        return blob_name

    layers = []
    # input block: (C, P, F, F, N) -> packed (C*P, F*F, N)
    wb = sign(net.bpie.w)
    layers.append(
        {
            "kind": "bpie-input",
            "planes": p,
            "select_highest": True,
            "multiplier": n,
            "kernel": f,
            "weights": add_blob(tensor_packed(wb, (c * p, f * f, n))),
            "affines": _affine_rows(net.bpie.affine_rows()),
            "affine_mode": "fixed",
            "fuse_output": "sign-bits",
        }
    )
    for conv in (net.conv1, net.conv2):
        wb = sign(conv.w)  # (F, F, Cin, O) -> packed (F*F, Cin, O)
        layers.append(
            {
                "kind": "binary-conv",
                "filters": conv.cout,
                "kernel": conv.f,
                "padding": "same",
                "weights": add_blob(
                    tensor_packed(wb, (conv.f * conv.f, conv.cin, conv.cout))
                ),
                "affines": _affine_rows(conv.bn.eval_affine_rows()),
            }
        )
        layers.append({"kind": "sign"})
        layers.append({"kind": "maxpool2"})
    wb = sign(net.head.w)  # (In, O) -> packed (1, In, O)
    layers.append(
        {
            "kind": "softmax-head",
            "units": net.head.w.shape[1],
            "weights": add_blob(tensor_packed(wb, (1,) + net.head.w.shape)),
        }
    )

    data = build_container(name, (h, w, c), layers, blobs)
    with open(path, "wb") as fh:
        fh.write(data)


def read_container(path):
    """Minimal parser for round-trip verification: returns (meta, blob
    payload bytes keyed by name), with digests checked."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError("bad container magic")
    version, mlen = struct.unpack("<HI", data[4:10])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported version {version}")
    meta = json.loads(data[10 : 10 + mlen].decode("utf-8"))
    region = data[10 + mlen :]
    blobs = {}
    for blob_name, entry in meta["blobs"].items():
        payload = region[entry["offset"] : entry["offset"] + entry["size"]]
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise ValueError(f"digest mismatch for {blob_name}")
        blobs[blob_name] = payload
    return meta, blobs
