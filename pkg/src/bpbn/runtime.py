"""Graph executor over the packed/fixed-point kernels.

Walks a manifest's effective layers with an (H, W, C) byte image and
returns real-valued logits plus an optional per-layer trace.  The
production path never touches floats until the terminal conversion:
convolutions are XNOR-popcount, batch norms either fold into integer
threshold compares (when a sign layer follows) or run as Q16.16 affines,
and the input block is the fixed-point bit-plane pipeline.

Parallelism is capped by the BPBN_THREADS environment variable (0 or
unset = auto); results are bit-identical for any thread count because
work only ever splits across independent output maps.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError
from .result import InferenceResult
from .tensors import PackedBitTensor, as_byte_tensor, unpack_bipolar
from .binops import (
    BinaryKernel,
    FixedAffine,
    FloatAffine,
    affine_fixed_per_map,
    binary_conv2d,
    binary_dense,
    fold_bn_to_threshold,
    int8_conv2d,
    maxpool2,
    sign_to_bits,
    threshold_to_bits,
)
from .bpie import BpieConfig, BpieWeights, bpie_forward
from .encoders import encode_bil, encode_dbid, encode_thermometer
from .model import ModelManifest

__all__ = ["InferenceResult", "run_inference", "get_thread_count"]


def get_thread_count() -> int:
    """Resolve BPBN_THREADS: explicit cap, or auto (0/unset)."""
    raw = os.environ.get("BPBN_THREADS", "").strip()
    if raw in ("", "0"):
        return min(4, os.cpu_count() or 1)
    n = int(raw)
    if n < 0:
        raise ValueError(f"BPBN_THREADS must be >= 0, got {n}")
    return n


def _layer_affines(layer) -> list[FloatAffine] | None:
    rows = layer.get("affines")
    if rows is None:
        return None
    return [FloatAffine(*row) for row in rows]


def _bpie_weights(manifest, layer) -> tuple[BpieWeights, BpieConfig]:
    c = manifest.input_dims[2]
    p, n, f = layer["planes"], layer["multiplier"], layer["kernel"]
    blob = manifest.blob(layer["weights"])
    w = (1 - 2 * blob.bits().astype(np.int8).reshape(c, p, f, f, n)).astype(np.int8)
    affs = np.asarray(layer["affines"], dtype=np.float64).reshape(c, p, n, 4)
    weights = BpieWeights.from_arrays(w, affs)
    positions = (
        tuple(range(8 - p, 8)) if layer.get("select_highest", True) else tuple(range(p))
    )
    cfg = BpieConfig(
        planes=p,
        multiplier=n,
        affine_mode=layer.get("affine_mode", "fixed"),
        fuse_output=layer.get("fuse_output", "accum"),
        select_highest=layer.get("select_highest", True),
    )
    return weights.rekey(positions), cfg


def _binary_kernel(manifest, layer, depthwise=False) -> BinaryKernel:
    blob = manifest.blob(layer["weights"])
    ff, cin, o = blob.dims
    f = layer["kernel"] if "kernel" in layer else 1
    bias = None
    if layer.get("bias") is not None:
        bias = manifest.blob(layer["bias"]).reshape(-1)
    pm1 = 1 - 2 * blob.bits().astype(np.int8)
    return BinaryKernel(
        pm1.reshape(f, f, cin, o), bias=bias, depthwise=depthwise
    )


def _trace_payload(value):
    if isinstance(value, PackedBitTensor):
        return unpack_bipolar(value)
    return np.array(value, copy=True)


def run_inference(
    manifest: ModelManifest,
    img: np.ndarray,
    path: str = "production",
    trace: bool = False,
    threads: int | None = None,
) -> InferenceResult:
    """Run one image through the model.

    path "production" uses the packed integer kernels; "reference" re-runs
    everything through the independent float interpreter.  Logits are
    real-valued either way (the softmax head, when present, ends in float
    softmax over the integer dense outputs).
    """
    img = as_byte_tensor(img)
    if tuple(img.shape) != tuple(manifest.input_dims):
        raise ShapeError(
            f"image dims {img.shape} do not match model input {manifest.input_dims}"
        )
    if path == "reference":
        from . import reference  # deferred: keeps the oracle path decoupled

        return reference.reference_forward(manifest, img, trace=trace)
    if path != "production":
        raise ValueError(f"unknown inference path {path!r}")
    if threads is None:
        threads = get_thread_count()

    layers = manifest.effective_layers()
    records: list[dict] = [] if trace else None
    skipped = {id(l) for l in manifest.layers} - {id(l) for l in layers}

    def record(layer, value):
        if trace:
            records.append(
                {"kind": layer["kind"], "output": _trace_payload(value)}
            )

    state = img
    frac_bits = 0
    i = 0
    while i < len(layers):
        layer = layers[i]
        kind = layer["kind"]
        nxt = layers[i + 1] if i + 1 < len(layers) else None

        if kind == "bpie-input":
            weights, cfg = _bpie_weights(manifest, layer)
            state = bpie_forward(state, weights, cfg, threads=threads)
            frac_bits = 16 if cfg.affine_mode == "fixed" else 0
            record(layer, state)
        elif kind == "dbid-input":
            state = encode_dbid(state, layer["planes"], layer.get("select_highest", True))
            record(layer, state)
        elif kind == "thermometer-input":
            state = encode_thermometer(state, layer["expansion"])
            record(layer, state)
        elif kind == "bil-input":
            kernel = _binary_kernel(manifest, layer)
            bn = [FixedAffine.from_bn(a) for a in _layer_affines(layer)]
            state = encode_bil(
                state, layer["planes"], kernel, bn, layer.get("select_highest", True)
            )
            record(layer, state)
        elif kind == "int8-conv":
            blob = manifest.blob(layer["weights"])
            f, o = layer["kernel"], layer["filters"]
            w = blob.reshape(f, f, blob.shape[1], o)
            bias = None
            if layer.get("bias") is not None:
                bias = manifest.blob(layer["bias"]).reshape(-1)
            state = int8_conv2d(state, w, bias=bias, padding=layer.get("padding", "same"))
            frac_bits = 0
            record(layer, state)
        elif kind in ("binary-conv", "binary-depthwise-conv", "binary-dense"):
            depthwise = kind == "binary-depthwise-conv"
            kernel = _binary_kernel(manifest, layer, depthwise=depthwise)
            if kind == "binary-dense":
                state = binary_dense(state.flat(), kernel, threads=threads)
            else:
                state = binary_conv2d(
                    state, kernel, padding=layer.get("padding", "same"), threads=threads
                )
            frac_bits = 0
            record(layer, state)
            affines = _layer_affines(layer)
            if affines is not None:
                if nxt is not None and nxt["kind"] == "sign":
                    # fold BN+sign into exact integer threshold compares
                    folded = [fold_bn_to_threshold(a) for a in affines]
                    state = threshold_to_bits(
                        state, [t for t, _ in folded], [s for _, s in folded]
                    )
                    record(nxt, state)
                    i += 1  # the sign layer is consumed by the fold
                else:
                    state = affine_fixed_per_map(state, [FixedAffine.from_bn(a) for a in affines])
                    frac_bits = 16
        elif kind == "maxpool2":
            state = maxpool2(state)
            record(layer, state)
        elif kind == "sign":
            state = sign_to_bits(state)
            frac_bits = 0
            record(layer, state)
        elif kind == "softmax-head":
            kernel = _binary_kernel(manifest, layer)
            ints = binary_dense(state.flat(), kernel, threads=threads)
            exps = np.exp(ints.reshape(-1).astype(np.float64) - ints.max())
            state = exps / exps.sum()
            frac_bits = 0
            record(layer, state)
        else:  # pragma: no cover - validation rejects unknown kinds
            raise ShapeError(f"unknown layer kind {kind!r}")
        i += 1

    if trace and skipped:
        records.append(
            {"kind": "skipped-F1", "count": len(skipped), "output": None}
        )

    if isinstance(state, PackedBitTensor):
        logits = unpack_bipolar(state).reshape(-1).astype(np.float64)
    else:
        logits = np.asarray(state, dtype=np.float64).reshape(-1)
        if frac_bits:
            logits = logits / (1 << frac_bits)
    return InferenceResult(logits=logits, trace=records)
