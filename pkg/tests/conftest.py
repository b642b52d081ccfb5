import numpy as np
import pytest

from bpbn.model import ModelBuilder


@pytest.fixture
def rng():
    return np.random.default_rng(0xB17)


def random_pm1(rng, shape):
    """Uniform {-1,+1} int8 tensor."""
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)


def dyadic_bn_rows(rng, count):
    """BN rows (gamma, 0, 1, beta) with gamma/beta on a 2^-10 grid.

    Dyadic parameters are exact in Q16.16, so fixed- and float-path values
    coincide bit-for-bit and comparisons test the machinery, not rounding
    luck.  Used wherever the production path applies a Q16.16 affine whose
    output feeds further arithmetic (bpie fusion, BIL).
    """
    g = rng.integers(256, 2049, size=count) / 1024.0
    g = g * rng.choice([-1.0, 1.0], size=count)
    b = rng.integers(-2048, 2049, size=count) / 1024.0
    return np.stack([g, np.zeros(count), np.ones(count), b], axis=1)


def continuous_bn_rows(rng, count):
    """Fully continuous BN rows; safe where BN+sign is folded to an exact
    integer threshold (conv -> sign), since the fold calibrates against the
    float predicate."""
    g = rng.uniform(0.2, 2.0, count) * rng.choice([-1.0, 1.0], size=count)
    mu = rng.uniform(-3.0, 3.0, count)
    sigma = rng.uniform(0.3, 2.0, count)
    beta = rng.uniform(-2.0, 2.0, count)
    return np.stack([g, mu, sigma, beta], axis=1)


def random_small_model(rng, input_hw=8, channels=3, name="rand", encoder=None):
    """A small random model over an input_hw^2 x channels input.

    Covers all input encoders, folded conv+sign blocks, optional pooling
    and dense layers, ending in a softmax head.
    """
    h = w = input_hw
    c = channels
    b = ModelBuilder(name, (h, w, c))
    if encoder is None:
        encoder = rng.choice(["bpie", "bpie", "dbid", "thermometer", "bil"])
    if encoder == "bpie":
        p = int(rng.choice([4, 8]))
        n = int(rng.integers(1, 4))
        f = int(rng.choice([1, 3]))
        wts = random_pm1(rng, (c, p, f, f, n))
        affs = dyadic_bn_rows(rng, c * p * n).reshape(c, p, n, 4)
        fuse = "sign-bits" if rng.random() < 0.7 else "accum"
        b.add_bpie_input(wts, affs, fuse_output=fuse)
        if fuse == "accum":
            b.add_sign()
        cur_c = n * c
    elif encoder == "dbid":
        p = int(rng.choice([4, 8]))
        b.add_dbid_input(p)
        cur_c = c * p
    elif encoder == "thermometer":
        k = int(rng.choice([4, 8]))
        b.add_thermometer_input(k)
        cur_c = c * k
    else:
        p = int(rng.choice([4, 8]))
        k = int(rng.integers(2, 9))
        wts = random_pm1(rng, (c * p, k))
        b.add_bil_input(p, wts, dyadic_bn_rows(rng, k))
        cur_c = k
    size = h
    for _ in range(int(rng.integers(1, 3))):
        o = int(rng.integers(2, 7))
        wts = random_pm1(rng, (3, 3, cur_c, o))
        b.add_binary_conv(
            wts,
            affines=continuous_bn_rows(rng, o),
            bias=rng.integers(-2, 3, size=o),
        )
        b.add_sign()
        cur_c = o
        if size % 2 == 0 and size > 2 and rng.random() < 0.5:
            b.add_maxpool2()
            size //= 2
    classes = int(rng.integers(2, 5))
    wts = random_pm1(rng, (size * size * cur_c, classes))
    b.add_softmax_head(wts, bias=rng.integers(-4, 5, size=classes))
    return b.build()


def random_image(rng, dims):
    return rng.integers(0, 256, size=dims, dtype=np.uint8)


def naive_pm1_conv(x, w, bias=None, padding="valid", depthwise=False):
    """Naive +-1 convolution oracle: float multiply-accumulate, loops only.

    x: (H, W, C) in {-1,+1}; dense w: (F, F, C, O); depthwise w: (F, F, C, N)
    applied per channel (output c-major, n-minor).  "Same" padding pads with
    bipolar +1.  Deliberately shares no code with the packed kernels.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
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
                patch = x[i : i + f, j : j + f, :]
                for ch in range(c):
                    for m in range(n):
                        out[i, j, ch * n + m] = np.sum(patch[:, :, ch] * w[:, :, ch, m])
    else:
        o = w.shape[3]
        out = np.zeros((oh, ow, o))
        for i in range(oh):
            for j in range(ow):
                patch = x[i : i + f, j : j + f, :]
                for m in range(o):
                    out[i, j, m] = np.sum(patch * w[:, :, :, m])
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out
