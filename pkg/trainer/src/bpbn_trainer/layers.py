"""Float training layers with straight-through-estimator gradients.

Forward passes binarize weights and activations with sign (sign(0) = +1,
matching the engine); backward passes use the vanilla STE: the gradient
of sign is the identity inside [-1, 1] and zero outside.  Batch norm
stays in float throughout, with running statistics for eval mode.

Conventions shared with the inference engine: bit-plane values are
bipolar (+1 for an unset pixel bit, -1 for a set one), binary
convolutions use "same" padding with pad value +1, re-weighting
multiplies plane bp by the constant 2^bp at its true bit position, fused
channels are channel-major / map-minor.  Eval-mode forward therefore
computes exactly what the engine's float reference path computes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "sign",
    "ste_mask",
    "BatchNorm",
    "ConvBNSign",
    "BpieBlock",
    "DenseHead",
    "maxpool_forward",
    "maxpool_backward",
    "softmax_cross_entropy",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def sign(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def ste_mask(x: np.ndarray) -> np.ndarray:
    """Straight-through gradient window: 1 inside [-1, 1], 0 outside."""
    return (np.abs(x) <= 1.0).astype(np.float64)


def im2col(x: np.ndarray, f: int, pad_value: float) -> np.ndarray:
    """(B, H, W, C) -> (B, H, W, F*F*C) same-padded patch matrix."""
    p = (f - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), constant_values=pad_value)
    win = sliding_window_view(xp, (f, f), axis=(1, 2))  # (B, H, W, C, F, F)
    b, oh, ow = win.shape[:3]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        b, oh, ow, f * f * x.shape[3]
    )


def col2im(dcols: np.ndarray, shape, f: int) -> np.ndarray:
    """Adjoint of :func:`im2col` (padding contributions are dropped)."""
    b, h, w, c = shape
    p = (f - 1) // 2
    dxp = np.zeros((b, h + 2 * p, w + 2 * p, c))
    d = dcols.reshape(b, h, w, f, f, c)
    for i in range(f):
        for j in range(f):
            dxp[:, i : i + h, j : j + w, :] += d[:, :, :, i, j, :]
    return dxp[:, p : p + h, p : p + w, :]


class BatchNorm:
    """Per-map batch norm over (B, H, W, M) with running statistics."""

    def __init__(self, maps: int):
        self.gamma = np.ones(maps)
        self.beta = np.zeros(maps)
        self.running_mean = np.zeros(maps)
        self.running_var = np.ones(maps)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            axes = tuple(range(x.ndim - 1))
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mean
            self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var
            self._invstd = 1.0 / np.sqrt(var + BN_EPS)
            self._xhat = (x - mean) * self._invstd
            return self.gamma * self._xhat + self.beta
        return (
            self.gamma * (x - self.running_mean)
            / np.sqrt(self.running_var + BN_EPS)
            + self.beta
        )

    def backward(self, dy: np.ndarray):
        axes = tuple(range(dy.ndim - 1))
        n = dy.size // dy.shape[-1]
        self.dgamma = (dy * self._xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        dx = (self.gamma * self._invstd) * (
            dy - self.dbeta / n - self._xhat * self.dgamma / n
        )
        return dx

    def eval_affine_rows(self) -> np.ndarray:
        """(gamma, mu, sigma, beta) rows as the engine stores them."""
        sigma = np.sqrt(self.running_var + BN_EPS)
        return np.stack(
            [self.gamma, self.running_mean, sigma, self.beta], axis=1
        )


class ConvBNSign:
    """Binary conv (same padding, pad +1) + batch norm + sign with STE."""

    def __init__(self, rng: np.random.Generator, cin: int, cout: int, f: int = 3):
        self.f = f
        self.cin = cin
        self.cout = cout
        self.w = rng.uniform(-0.8, 0.8, size=(f, f, cin, cout))
        self.bn = BatchNorm(cout)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        wb = sign(self.w)
        if train:
            self._cols = im2col(x, self.f, 1.0)
            self._xshape = x.shape
            y = self._cols @ wb.reshape(-1, self.cout)
        else:
            y = im2col(x, self.f, 1.0) @ wb.reshape(-1, self.cout)
        z = self.bn.forward(y, train)
        if train:
            self._pre_sign = z
        return sign(z)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dz = dout * ste_mask(self._pre_sign)
        dy = self.bn.backward(dz)
        wb = sign(self.w)
        dwb = np.einsum("bhwk,bhwo->ko", self._cols, dy).reshape(self.w.shape)
        self.dw = dwb * ste_mask(self.w)
        dcols = dy @ wb.reshape(-1, self.cout).T
        return col2im(dcols, self._xshape, self.f)

    def params(self):
        return [
            ("w", self, "w", "dw"),
            ("gamma", self.bn, "gamma", "dgamma"),
            ("beta", self.bn, "beta", "dbeta"),
        ]


class BpieBlock:
    """Trainable bit-plane input block.

    Per (channel, plane): a binary depthwise conv producing N maps, batch
    norm per map, float multiplication by 2^bp, summed over planes per
    channel; the fused maps pass through sign (STE).  Planes cover the
    highest `planes` bit positions.
    """

    def __init__(self, rng, channels: int, planes: int, multiplier: int, f: int = 3):
        self.c = channels
        self.p = planes
        self.n = multiplier
        self.f = f
        self.positions = list(range(8 - planes, 8))
        self.w = rng.uniform(-0.8, 0.8, size=(channels, planes, f, f, multiplier))
        self.bns = [
            [BatchNorm(multiplier) for _ in range(planes)] for _ in range(channels)
        ]

    def plane_values(self, img: np.ndarray, c: int, bp: int) -> np.ndarray:
        bit = (img[:, :, :, c].astype(np.int64) >> bp) & 1
        return (1.0 - 2.0 * bit)[:, :, :, None]

    def forward(self, img: np.ndarray, train: bool) -> np.ndarray:
        b, h, w, _ = img.shape
        fused = np.zeros((b, h, w, self.c * self.n))
        if train:
            self._cols = {}
        for c in range(self.c):
            acc = np.zeros((b, h, w, self.n))
            for pi, bp in enumerate(self.positions):
                cols = im2col(self.plane_values(img, c, bp), self.f, 1.0)
                wb = sign(self.w[c, pi]).reshape(-1, self.n)
                z = self.bns[c][pi].forward(cols @ wb, train)
                acc += z * float(2**bp)
                if train:
                    self._cols[(c, pi)] = cols
            fused[:, :, :, c * self.n : (c + 1) * self.n] = acc
        if train:
            self._pre_sign = fused
        return sign(fused)

    def backward(self, dout: np.ndarray) -> None:
        dfused = dout * ste_mask(self._pre_sign)
        self.dw = np.zeros_like(self.w)
        for c in range(self.c):
            dacc = dfused[:, :, :, c * self.n : (c + 1) * self.n]
            for pi, bp in enumerate(self.positions):
                dz = dacc * float(2**bp)
                dy = self.bns[c][pi].backward(dz)
                dwb = np.einsum("bhwk,bhwn->kn", self._cols[(c, pi)], dy)
                self.dw[c, pi] = dwb.reshape(self.f, self.f, self.n) * ste_mask(
                    self.w[c, pi]
                )

    def params(self):
        out = [("w", self, "w", "dw")]
        for c in range(self.c):
            for pi in range(self.p):
                bn = self.bns[c][pi]
                out.append((f"gamma{c}.{pi}", bn, "gamma", "dgamma"))
                out.append((f"beta{c}.{pi}", bn, "beta", "dbeta"))
        return out

    def affine_rows(self) -> np.ndarray:
        """(C, P, N, 4) eval-mode affine table in engine order."""
        rows = np.stack(
            [
                np.stack([self.bns[c][pi].eval_affine_rows() for pi in range(self.p)])
                for c in range(self.c)
            ]
        )
        return rows


class DenseHead:
    """Binary dense classifier over the flattened (h, w, c) input."""

    def __init__(self, rng, n_in: int, classes: int):
        self.w = rng.uniform(-0.8, 0.8, size=(n_in, classes))

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        flat = x.reshape(x.shape[0], -1)
        if train:
            self._flat = flat
            self._xshape = x.shape
        return flat @ sign(self.w)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        dwb = self._flat.T @ dlogits
        self.dw = dwb * ste_mask(self.w)
        dflat = dlogits @ sign(self.w).T
        return dflat.reshape(self._xshape)

    def params(self):
        return [("w", self, "w", "dw")]


def maxpool_forward(x: np.ndarray):
    """2x2 stride-2 max over (B, H, W, C); returns (out, argmax state)."""
    b, h, w, c = x.shape
    xr = x.reshape(b, h // 2, 2, w // 2, 2, c)
    flat = np.ascontiguousarray(xr.transpose(0, 1, 3, 5, 2, 4)).reshape(
        b, h // 2, w // 2, c, 4
    )
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout: np.ndarray, state) -> np.ndarray:
    idx, shape = state
    b, h, w, c = shape
    dflat = np.zeros((b, h // 2, w // 2, c, 4))
    np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
    dxr = dflat.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(dxr).reshape(b, h, w, c)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean CE loss and dlogits for integer labels."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.log(probs[np.arange(n), labels] + 1e-12).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n, probs
