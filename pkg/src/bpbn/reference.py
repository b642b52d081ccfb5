"""Float reference interpreter: the engine's correctness oracle.

Re-evaluates every layer kind with naive float64 arithmetic -- bipolar
values as +-1.0 floats, batch norm in its four-parameter form, plain
einsum convolutions -- and deliberately shares no code with the packed
XNOR-popcount kernels or the fixed-point affine path.  Only tensor
plumbing (blob decoding) is reused.

The interpreter can also count multiply-accumulate invocations per layer
(window size times output positions, padded taps included), which the
cost model cross-checks against its closed-form MAC formulas.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .model import ModelManifest
from .result import InferenceResult
from .tensors import as_byte_tensor

__all__ = ["reference_forward"]


def _conv_float(x: np.ndarray, w: np.ndarray, padding: str, pad_value: float):
    """Naive float conv; returns (out, mac_count).

    x: (H, W, C) float; w: (F, F, C, O).  MACs count every tap of every
    window, padded positions included, matching the closed-form counts.
    """
    f = w.shape[0]
    if padding == "same":
        p = (f - 1) // 2
        x = np.pad(x, ((p, p), (p, p), (0, 0)), constant_values=pad_value)
    win = sliding_window_view(x, (f, f), axis=(0, 1))  # (H', W', C, F, F)
    out = np.einsum("hwcij,ijco->hwo", win, w, optimize=True)
    macs = out.shape[0] * out.shape[1] * f * f * w.shape[2] * w.shape[3]
    return out, macs


def _depthwise_float(x: np.ndarray, w: np.ndarray, padding: str, pad_value: float):
    """Per-channel conv; w: (F, F, C, N); output channels c-major n-minor."""
    f = w.shape[0]
    if padding == "same":
        p = (f - 1) // 2
        x = np.pad(x, ((p, p), (p, p), (0, 0)), constant_values=pad_value)
    win = sliding_window_view(x, (f, f), axis=(0, 1))  # (H', W', C, F, F)
    out = np.einsum("hwcij,ijcn->hwcn", win, w, optimize=True)
    oh, ow, c, n = out.shape
    macs = oh * ow * f * f * c * n
    return out.reshape(oh, ow, c * n), macs


def _bn(x: np.ndarray, rows: list) -> np.ndarray:
    """Eq-style batch norm per map: gamma*(x - mu)/sigma + beta."""
    a = np.asarray(rows, dtype=np.float64)  # (O, 4)
    gamma, mu, sigma, beta = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    return gamma * (x - mu) / sigma + beta


def _sign(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def _plane_values(img: np.ndarray, bp: int, channel: int) -> np.ndarray:
    """Bipolar plane: set pixel bit -> -1.0."""
    bit = (img[:, :, channel].astype(np.int64) >> bp) & 1
    return (1.0 - 2.0 * bit)[:, :, None]


def _positions(planes: int, select_highest: bool) -> list[int]:
    return list(range(8 - planes, 8)) if select_highest else list(range(planes))


def _unpack_weights(blob) -> np.ndarray:
    """Packed blob -> +-1 float array of the blob's dims."""
    return (1.0 - 2.0 * blob.bits().astype(np.float64))


def reference_forward(
    manifest: ModelManifest,
    img: np.ndarray,
    trace: bool = False,
    count_macs: bool = False,
) -> InferenceResult:
    """Evaluate the model in pure float64; optional per-layer MAC counts."""
    img = as_byte_tensor(img)
    if tuple(img.shape) != tuple(manifest.input_dims):
        raise ShapeError(
            f"image dims {img.shape} do not match model input {manifest.input_dims}"
        )
    layers = manifest.effective_layers()
    records: list[dict] = [] if trace else None
    macs: list[dict] = [] if count_macs else None
    c_in = manifest.input_dims[2]

    def record(layer, value, layer_macs=0):
        if trace:
            records.append({"kind": layer["kind"], "output": np.array(value, copy=True)})
        if count_macs:
            macs.append({"kind": layer["kind"], "macs": int(layer_macs)})

    state = img
    i = 0
    while i < len(layers):
        layer = layers[i]
        kind = layer["kind"]

        if kind == "bpie-input":
            p, n, f = layer["planes"], layer["multiplier"], layer["kernel"]
            blob = _unpack_weights(manifest.blob(layer["weights"]))
            w = blob.reshape(c_in, p, f, f, n)
            rows = np.asarray(layer["affines"], dtype=np.float64).reshape(c_in, p, n, 4)
            positions = _positions(p, layer.get("select_highest", True))
            total_macs = 0
            fused = []
            for c in range(c_in):
                acc = None
                for pi, bp in enumerate(positions):
                    plane = _plane_values(state, bp, c)
                    conv, m = _depthwise_float(
                        plane, w[c, pi].reshape(f, f, 1, n), "same", 1.0
                    )
                    total_macs += m
                    normed = _bn(conv, rows[c, pi])
                    weighted = normed * float(2**bp)
                    acc = weighted if acc is None else acc + weighted
                fused.append(acc)
            state = np.concatenate(fused, axis=2)
            if layer.get("fuse_output") == "sign-bits":
                state = _sign(state)
            record(layer, state, total_macs)
        elif kind == "dbid-input":
            positions = _positions(layer["planes"], layer.get("select_highest", True))
            state = np.concatenate(
                [_plane_values(state, bp, c) for c in range(c_in) for bp in positions],
                axis=2,
            )
            record(layer, state)
        elif kind == "thermometer-input":
            k = layer["expansion"]
            j = np.arange(1, k + 1, dtype=np.int64)
            thresholds = -(-(j * 256) // (k + 1))
            # set channel (p >= t) is bipolar -1 under the engine convention
            cols = [
                (1.0 - 2.0 * (state[:, :, c].astype(np.int64) >= t))[:, :, None]
                for c in range(c_in)
                for t in thresholds
            ]
            state = np.concatenate(cols, axis=2)
            record(layer, state)
        elif kind == "bil-input":
            p = layer["planes"]
            positions = _positions(p, layer.get("select_highest", True))
            dbid = np.concatenate(
                [_plane_values(state, bp, c) for c in range(c_in) for bp in positions],
                axis=2,
            )
            blob = _unpack_weights(manifest.blob(layer["weights"]))
            k = layer["expansion"]
            w = blob.reshape(1, 1, c_in * p, k)
            conv, m = _conv_float(dbid, w, "valid", 1.0)
            state = _sign(_bn(conv, layer["affines"]))
            record(layer, state, m)
        elif kind == "int8-conv":
            blob = manifest.blob(layer["weights"])
            f, o = layer["kernel"], layer["filters"]
            w = blob.reshape(f, f, blob.shape[1], o).astype(np.float64)
            x = state.astype(np.float64)
            out, m = _conv_float(x, w, layer.get("padding", "same"), 0.0)
            if layer.get("bias") is not None:
                out = out + manifest.blob(layer["bias"]).reshape(-1)
            state = out
            record(layer, state, m)
        elif kind in ("binary-conv", "binary-depthwise-conv"):
            blob = _unpack_weights(manifest.blob(layer["weights"]))
            f = layer["kernel"]
            padding = layer.get("padding", "same")
            if kind == "binary-conv":
                w = blob.reshape(f, f, blob.shape[1], layer["filters"])
                out, m = _conv_float(state, w, padding, 1.0)
            else:
                w = blob.reshape(f, f, blob.shape[1], layer["multiplier"])
                out, m = _depthwise_float(state, w, padding, 1.0)
            if layer.get("bias") is not None:
                out = out + manifest.blob(layer["bias"]).reshape(-1)
            if layer.get("affines") is not None:
                out = _bn(out, layer["affines"])
            state = out
            record(layer, state, m)
        elif kind == "maxpool2":
            h, w2, c = state.shape
            state = state.reshape(h // 2, 2, w2 // 2, 2, c).max(axis=(1, 3))
            record(layer, state)
        elif kind == "sign":
            state = _sign(state)
            record(layer, state)
        elif kind in ("binary-dense", "softmax-head"):
            blob = _unpack_weights(manifest.blob(layer["weights"]))
            o = layer["units"]
            w = blob.reshape(-1, o)
            flat = state.reshape(-1)
            out = flat @ w
            m = flat.size * o
            if layer.get("bias") is not None:
                out = out + manifest.blob(layer["bias"]).reshape(-1)
            if kind == "binary-dense":
                if layer.get("affines") is not None:
                    out = _bn(out, layer["affines"])
                state = out.reshape(1, 1, o)
            else:
                exps = np.exp(out - out.max())
                state = exps / exps.sum()
            record(layer, state, m)
        else:  # pragma: no cover - validation rejects unknown kinds
            raise ShapeError(f"unknown layer kind {kind!r}")
        i += 1

    logits = np.asarray(state, dtype=np.float64).reshape(-1)
    return InferenceResult(logits=logits, trace=records, mac_counts=macs)
