"""Declarative model description and the "BPBN" container format.

A model is a JSON metadata document plus named binary blobs:

    magic    4 bytes   b"BPBN"
    version  u16 LE    1
    mlen     u32 LE    metadata byte length
    meta     mlen bytes of UTF-8 JSON
    blobs    concatenated tensors in the raw tensor (BPT1) format

Metadata grammar (canonical form: sorted keys, compact separators)::

    {
      "name": str,
      "input_dims": [H, W, C],
      "first_layer_mode": "with-F1" | "skip-F1",
      "layers": [ {"kind": ..., ...}, ... ],
      "blobs": {name: {"offset": int, "size": int, "sha256": hex}}
    }

Blob offsets are relative to the start of the blob region and blobs are
laid out in sorted-name order, so a loaded manifest saves back to the
identical byte string.  Every blob carries a SHA-256 digest, verified on
load.  Binary weights are stored bit-packed; layer affine tables (gamma,
mu, sigma, beta per output map) live inline in the metadata as floats.

Layer kinds and their fields:

    bpie-input    planes, select_highest, multiplier, kernel, weights,
                  affines, affine_mode, fuse_output
                  weights blob: packed (C*P, F*F, N), plane-major order
    dbid-input    planes, select_highest
    thermometer-input  expansion
    bil-input     planes, select_highest, expansion, weights, affines
                  weights blob: packed (1, C*P, K)
    int8-conv     filters, kernel, padding, weights, [bias], [f1]
                  weights blob: i32 (F*F, C, O); bias blob: i32 (1, 1, O)
    binary-conv   filters, kernel, padding, weights, [bias], [affines], [f1]
                  weights blob: packed (F*F, Cin, O)
    binary-depthwise-conv  multiplier, kernel, padding, weights, [bias],
                  [affines]; weights blob: packed (F*F, C, N)
    maxpool2      -
    sign          -
    binary-dense  units, weights, [bias], [affines]
                  weights blob: packed (1, In, O), input flattened (h, w, c)
    softmax-head  units, weights, [bias]

The first layer must be exactly one input-encoder kind (or int8-conv for
the non-binarized baseline); a later layer may carry ``"f1": true`` and is
skipped entirely when first_layer_mode is "skip-F1".
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DigestError,
    MissingBlobError,
    ModelFormatError,
    ModelVersionError,
    ShapeError,
)
from .tensors import PackedBitTensor, pack_bits_lsb, read_tensor, write_tensor

__all__ = ["ModelManifest", "ModelBuilder", "load_model", "save_model", "validate_manifest"]

MODEL_MAGIC = b"BPBN"
MODEL_VERSION = 1

INPUT_KINDS = (
    "bpie-input",
    "dbid-input",
    "bil-input",
    "thermometer-input",
    "int8-conv",
)
LAYER_KINDS = INPUT_KINDS + (
    "binary-conv",
    "binary-depthwise-conv",
    "maxpool2",
    "sign",
    "binary-dense",
    "softmax-head",
)


@dataclass
class ModelManifest:
    """A validated model: metadata plus decoded weight blobs."""

    name: str
    input_dims: tuple[int, int, int]
    first_layer_mode: str
    layers: list[dict]
    blobs: dict[str, PackedBitTensor | np.ndarray] = field(repr=False)

    def effective_layers(self) -> list[dict]:
        """Layers actually executed under the manifest's scenario."""
        if self.first_layer_mode == "skip-F1":
            return [l for l in self.layers if not l.get("f1")]
        return self.layers

    def blob(self, name: str):
        try:
            return self.blobs[name]
        except KeyError:
            raise MissingBlobError(f"layer references unknown blob {name!r}") from None


def _meta_bytes(manifest: ModelManifest, blob_bytes: dict[str, bytes]) -> bytes:
    table = {}
    offset = 0
    for name in sorted(blob_bytes):
        data = blob_bytes[name]
        table[name] = {
            "offset": offset,
            "size": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        }
        offset += len(data)
    meta = {
        "name": manifest.name,
        "input_dims": list(manifest.input_dims),
        "first_layer_mode": manifest.first_layer_mode,
        "layers": manifest.layers,
        "blobs": table,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_model(manifest: ModelManifest, path) -> None:
    """Serialize a manifest; the layout is canonical, so save(load(f)) == f."""
    validate_manifest(manifest)
    blob_bytes = {name: write_tensor(t) for name, t in manifest.blobs.items()}
    meta = _meta_bytes(manifest, blob_bytes)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HI", MODEL_VERSION, len(meta)))
        fh.write(meta)
        for name in sorted(blob_bytes):
            fh.write(blob_bytes[name])


def load_model(path) -> ModelManifest:
    """Parse, digest-check and shape-validate a model container."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a BPBN model file (bad magic)")
    version, mlen = struct.unpack("<HI", data[4:10])
    if version != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model version {version}")
    if len(data) < 10 + mlen:
        raise ModelFormatError("truncated metadata")
    try:
        meta = json.loads(data[10 : 10 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"bad metadata document: {e}") from e
    for key in ("name", "input_dims", "first_layer_mode", "layers", "blobs"):
        if key not in meta:
            raise ModelFormatError(f"metadata missing {key!r}")
    region = data[10 + mlen :]
    blobs = {}
    for name, entry in meta["blobs"].items():
        off, size = entry["offset"], entry["size"]
        if off < 0 or off + size > len(region):
            raise ModelFormatError(f"blob {name!r} outside blob region")
        payload = region[off : off + size]
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise DigestError(f"blob {name!r} digest mismatch")
        blobs[name] = read_tensor(payload)
    manifest = ModelManifest(
        name=meta["name"],
        input_dims=tuple(meta["input_dims"]),
        first_layer_mode=meta["first_layer_mode"],
        layers=meta["layers"],
        blobs=blobs,
    )
    validate_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# validation: every shape chain is checked before any execution
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _blob_dims(manifest, layer, expect_dims, expect_packed=True, key="weights"):
    name = layer.get(key)
    if name is None:
        raise ShapeError(f"{layer['kind']} layer missing {key!r} blob reference")
    blob = manifest.blob(name)
    packed = isinstance(blob, PackedBitTensor)
    _require(
        packed == expect_packed,
        f"blob {name!r} has wrong storage class for {layer['kind']}",
    )
    dims = blob.dims if packed else blob.shape
    _require(
        tuple(dims) == tuple(expect_dims),
        f"blob {name!r} dims {tuple(dims)} != expected {tuple(expect_dims)}",
    )
    return blob


def _check_affines(layer, count, required=False):
    rows = layer.get("affines")
    if rows is None:
        _require(not required, f"{layer['kind']} requires an affine table")
        return
    _require(
        len(rows) == count and all(len(r) == 4 for r in rows),
        f"{layer['kind']} affine table must be {count} rows of "
        "(gamma, mu, sigma, beta)",
    )
    _require(all(r[2] > 0 for r in rows), "affine sigma must be positive")


def _check_bias(manifest, layer, count):
    if layer.get("bias") is not None:
        _blob_dims(manifest, layer, (1, 1, count), expect_packed=False, key="bias")


def _conv_out(h, w, f, padding):
    _require(padding in ("same", "valid"), f"unknown padding {padding!r}")
    if padding == "same":
        return h, w
    _require(h >= f and w >= f, f"input {h}x{w} smaller than kernel {f}")
    return h - f + 1, w - f + 1


def validate_manifest(manifest: ModelManifest) -> None:
    """Walk the effective layer chain, checking kinds, blobs and shapes."""
    if manifest.first_layer_mode not in ("with-F1", "skip-F1"):
        raise ShapeError(f"unknown first_layer_mode {manifest.first_layer_mode!r}")
    layers = manifest.layers
    _require(len(layers) >= 1, "model needs at least one layer")
    for i, layer in enumerate(layers):
        kind = layer.get("kind")
        _require(kind in LAYER_KINDS, f"unknown layer kind {kind!r}")
        _require(
            (kind in INPUT_KINDS) == (i == 0),
            f"layer {i}: kind {kind!r} {'must be' if i else 'cannot be'} an "
            "interior layer" if kind in INPUT_KINDS else
            f"layer 0 must be an input encoder, got {kind!r}",
        )
        if layer.get("f1"):
            _require(i > 0, "the input layer cannot carry the f1 flag")

    h, w, c = manifest.input_dims
    _require(h > 0 and w > 0 and c > 0, f"bad input dims {manifest.input_dims}")
    state = ("bytes", h, w, c)
    effective = manifest.effective_layers()
    _require(effective and effective[0]["kind"] in INPUT_KINDS,
             "effective model lost its input layer")
    for i, layer in enumerate(effective):
        state = _validate_layer(manifest, layer, state)
        if layer["kind"] == "softmax-head":
            _require(i == len(effective) - 1, "softmax-head must be terminal")


def _validate_layer(manifest, layer, state):
    kind = layer["kind"]
    stype, h, w, c = state

    if kind in INPUT_KINDS:
        _require(stype == "bytes", f"{kind} needs byte input, found {stype}")

    if kind == "bpie-input":
        p, n, f = layer["planes"], layer["multiplier"], layer["kernel"]
        _require(1 <= p <= 8, f"plane count {p} out of range")
        _require(n >= 1, "multiplier must be >= 1")
        _require(f % 2 == 1, "kernel must be odd")
        _require(layer.get("affine_mode", "fixed") in ("fixed", "float"),
                 "bad affine_mode")
        _require(layer.get("fuse_output", "accum") in ("accum", "sign-bits"),
                 "bad fuse_output")
        _blob_dims(manifest, layer, (c * p, f * f, n))
        _check_affines(layer, c * p * n, required=True)
        out = "bits" if layer.get("fuse_output") == "sign-bits" else "accum"
        return (out, h, w, n * c)
    if kind == "dbid-input":
        p = layer["planes"]
        _require(1 <= p <= 8, f"plane count {p} out of range")
        return ("bits", h, w, c * p)
    if kind == "thermometer-input":
        k = layer["expansion"]
        _require(k >= 1, "expansion factor must be >= 1")
        return ("bits", h, w, c * k)
    if kind == "bil-input":
        p, k = layer["planes"], layer["expansion"]
        _require(1 <= p <= 8, f"plane count {p} out of range")
        _require(k >= 1, "expansion factor must be >= 1")
        _blob_dims(manifest, layer, (1, c * p, k))
        _check_affines(layer, k, required=True)
        return ("bits", h, w, k)
    if kind == "int8-conv":
        o, f = layer["filters"], layer["kernel"]
        _blob_dims(manifest, layer, (f * f, c, o), expect_packed=False)
        _check_bias(manifest, layer, o)
        oh, ow = _conv_out(h, w, f, layer.get("padding", "same"))
        return ("accum", oh, ow, o)
    if kind == "binary-conv":
        _require(stype == "bits", f"binary conv needs bit input, found {stype}")
        o, f = layer["filters"], layer["kernel"]
        _require(f % 2 == 1, "kernel must be odd")
        _blob_dims(manifest, layer, (f * f, c, o))
        _check_bias(manifest, layer, o)
        _check_affines(layer, o)
        oh, ow = _conv_out(h, w, f, layer.get("padding", "same"))
        return ("accum", oh, ow, o)
    if kind == "binary-depthwise-conv":
        _require(stype == "bits", f"depthwise conv needs bit input, found {stype}")
        n, f = layer["multiplier"], layer["kernel"]
        _require(f % 2 == 1, "kernel must be odd")
        _blob_dims(manifest, layer, (f * f, c, n))
        _check_bias(manifest, layer, c * n)
        _check_affines(layer, c * n)
        oh, ow = _conv_out(h, w, f, layer.get("padding", "same"))
        return ("accum", oh, ow, c * n)
    if kind == "maxpool2":
        _require(stype in ("bits", "accum"), f"cannot pool {stype}")
        _require(h % 2 == 0 and w % 2 == 0, f"maxpool2 needs even dims, got {h}x{w}")
        return (stype, h // 2, w // 2, c)
    if kind == "sign":
        _require(stype == "accum", f"sign needs accumulator input, found {stype}")
        return ("bits", h, w, c)
    if kind in ("binary-dense", "softmax-head"):
        _require(stype == "bits", f"{kind} needs bit input, found {stype}")
        o = layer["units"]
        _blob_dims(manifest, layer, (1, h * w * c, o))
        _check_bias(manifest, layer, o)
        if kind == "binary-dense":
            _check_affines(layer, o)
            return ("accum", 1, 1, o)
        return ("probs", 1, 1, o)
    raise ShapeError(f"unknown layer kind {kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------


def _pack_pm1(weights: np.ndarray, dims) -> PackedBitTensor:
    w = np.asarray(weights)
    if not np.isin(w, (-1, 1)).all():
        raise ShapeError("binary weights must be strictly +-1")
    bits = (w.reshape(-1) == -1).astype(np.uint8)
    return PackedBitTensor(tuple(dims), pack_bits_lsb(bits))


def _affine_rows(affines: np.ndarray) -> list[list[float]]:
    rows = np.asarray(affines, dtype=np.float64).reshape(-1, 4)
    return [[float(v) for v in row] for row in rows]


class ModelBuilder:
    """Programmatic manifest construction with auto-named blobs."""

    def __init__(self, name: str, input_dims, first_layer_mode: str = "with-F1"):
        self.name = name
        self.input_dims = tuple(int(d) for d in input_dims)
        self.first_layer_mode = first_layer_mode
        self.layers: list[dict] = []
        self.blobs: dict[str, PackedBitTensor | np.ndarray] = {}

    def _add_blob(self, tensor) -> str:
        name = f"blob{len(self.blobs):03d}"
        self.blobs[name] = tensor
        return name

    def add_bpie_input(
        self,
        weights: np.ndarray,
        affines: np.ndarray,
        fuse_output: str = "sign-bits",
        affine_mode: str = "fixed",
        select_highest: bool = True,
    ) -> "ModelBuilder":
        """weights: (C, P, F, F, N) +-1; affines: (C, P, N, 4) BN rows."""
        c, p, f, _, n = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (c * p, f * f, n)))
        self.layers.append(
            {
                "kind": "bpie-input",
                "planes": p,
                "select_highest": select_highest,
                "multiplier": n,
                "kernel": f,
                "weights": blob,
                "affines": _affine_rows(affines),
                "affine_mode": affine_mode,
                "fuse_output": fuse_output,
            }
        )
        return self

    def add_dbid_input(self, planes: int, select_highest: bool = True):
        self.layers.append(
            {"kind": "dbid-input", "planes": planes, "select_highest": select_highest}
        )
        return self

    def add_thermometer_input(self, expansion: int):
        self.layers.append({"kind": "thermometer-input", "expansion": expansion})
        return self

    def add_bil_input(
        self, planes: int, weights: np.ndarray, affines: np.ndarray,
        select_highest: bool = True,
    ):
        """weights: (C*P, K) +-1 pointwise bank; affines: (K, 4)."""
        cp, k = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (1, cp, k)))
        self.layers.append(
            {
                "kind": "bil-input",
                "planes": planes,
                "select_highest": select_highest,
                "expansion": k,
                "weights": blob,
                "affines": _affine_rows(affines),
            }
        )
        return self

    def add_int8_conv(
        self, weights: np.ndarray, bias=None, padding: str = "same", f1: bool = False
    ):
        """weights: (F, F, C, O) int8, stored as i32 in the blob."""
        w = np.asarray(weights)
        f, _, c, o = w.shape
        if np.abs(w).max(initial=0) > 127:
            raise ShapeError("int8 conv weights exceed int8 range")
        blob = self._add_blob(w.astype(np.int32).reshape(f * f, c, o))
        layer = {
            "kind": "int8-conv",
            "filters": o,
            "kernel": f,
            "padding": padding,
            "weights": blob,
        }
        if bias is not None:
            layer["bias"] = self._add_blob(
                np.asarray(bias, dtype=np.int32).reshape(1, 1, o)
            )
        if f1:
            layer["f1"] = True
        self.layers.append(layer)
        return self

    def add_binary_conv(
        self,
        weights: np.ndarray,
        affines=None,
        bias=None,
        padding: str = "same",
        f1: bool = False,
    ):
        """weights: (F, F, Cin, O) +-1; affines: (O, 4) or None."""
        f, _, cin, o = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (f * f, cin, o)))
        layer = {
            "kind": "binary-conv",
            "filters": o,
            "kernel": f,
            "padding": padding,
            "weights": blob,
        }
        self._attach_conv_extras(layer, affines, bias, o)
        if f1:
            layer["f1"] = True
        self.layers.append(layer)
        return self

    def add_binary_depthwise_conv(
        self, weights: np.ndarray, affines=None, bias=None, padding: str = "same"
    ):
        """weights: (F, F, C, N) +-1, one bank of N maps per channel."""
        f, _, c, n = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (f * f, c, n)))
        layer = {
            "kind": "binary-depthwise-conv",
            "multiplier": n,
            "kernel": f,
            "padding": padding,
            "weights": blob,
        }
        self._attach_conv_extras(layer, affines, bias, c * n)
        self.layers.append(layer)
        return self

    def _attach_conv_extras(self, layer, affines, bias, count):
        if affines is not None:
            layer["affines"] = _affine_rows(affines)
        if bias is not None:
            layer["bias"] = self._add_blob(
                np.asarray(bias, dtype=np.int32).reshape(1, 1, count)
            )

    def add_maxpool2(self):
        self.layers.append({"kind": "maxpool2"})
        return self

    def add_sign(self):
        self.layers.append({"kind": "sign"})
        return self

    def add_binary_dense(self, weights: np.ndarray, affines=None, bias=None):
        """weights: (In, O) +-1 over the (h, w, c)-flattened input."""
        n_in, o = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (1, n_in, o)))
        layer = {"kind": "binary-dense", "units": o, "weights": blob}
        self._attach_conv_extras(layer, affines, bias, o)
        self.layers.append(layer)
        return self

    def add_softmax_head(self, weights: np.ndarray, bias=None):
        """weights: (In, O) +-1; integer dense then float softmax."""
        n_in, o = np.asarray(weights).shape
        blob = self._add_blob(_pack_pm1(weights, (1, n_in, o)))
        layer = {"kind": "softmax-head", "units": o, "weights": blob}
        if bias is not None:
            layer["bias"] = self._add_blob(
                np.asarray(bias, dtype=np.int32).reshape(1, 1, o)
            )
        self.layers.append(layer)
        return self

    def build(self) -> ModelManifest:
        manifest = ModelManifest(
            name=self.name,
            input_dims=self.input_dims,
            first_layer_mode=self.first_layer_mode,
            layers=self.layers,
            blobs=self.blobs,
        )
        validate_manifest(manifest)
        return manifest
