"""Kernel equivalence against naive oracles, folding, pooling, affines."""

import numpy as np
import pytest

from bpbn.binops import (
    BinaryKernel,
    FixedAffine,
    FloatAffine,
    affine_fixed,
    affine_fixed_per_map,
    binary_conv2d,
    binary_dense,
    fold_bn_to_threshold,
    int8_conv2d,
    maxpool2,
    sign_to_bits,
    threshold_to_bits,
)
from bpbn.errors import BpbnError, RangeOverflowError, ShapeError
from bpbn.tensors import pack_bipolar, unpack_bipolar

from conftest import naive_pm1_conv, random_pm1


class TestBinaryConv2d:
    def test_matched_signs_depthwise(self):
        x = pack_bipolar(np.full((3, 3, 1), -1, dtype=np.int8))
        k = BinaryKernel(np.full((3, 3, 1, 1), -1, dtype=np.int8), depthwise=True)
        out = binary_conv2d(x, k, padding="valid")
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9

    def test_opposed_signs_depthwise(self):
        x = pack_bipolar(np.full((3, 3, 1), -1, dtype=np.int8))
        k = BinaryKernel(np.ones((3, 3, 1, 1), dtype=np.int8), depthwise=True)
        assert binary_conv2d(x, k, padding="valid")[0, 0, 0] == -9

    def test_dense_matches_naive(self, rng):
        x = random_pm1(rng, (8, 8, 4))
        w = random_pm1(rng, (3, 3, 4, 2))
        got = binary_conv2d(pack_bipolar(x), BinaryKernel(w), padding="valid")
        assert np.array_equal(got, naive_pm1_conv(x, w).astype(np.int32))

    @pytest.mark.parametrize("padding", ["valid", "same"])
    @pytest.mark.parametrize("depthwise", [False, True])
    def test_random_shapes_match_naive(self, rng, padding, depthwise):
        for _ in range(60):
            f = int(rng.choice([1, 3, 5]))
            h = int(rng.integers(f, f + 6))
            w = int(rng.integers(f, f + 6))
            c = int(rng.integers(1, 5))
            o = int(rng.integers(1, 4))
            x = random_pm1(rng, (h, w, c))
            shape = (f, f, c, o)
            wgt = random_pm1(rng, shape)
            bias = rng.integers(-3, 4, size=c * o if depthwise else o).astype(np.int32)
            k = BinaryKernel(wgt, bias=bias, depthwise=depthwise)
            got = binary_conv2d(pack_bipolar(x), k, padding=padding)
            ref = naive_pm1_conv(x, wgt, bias=bias, padding=padding, depthwise=depthwise)
            assert np.array_equal(got, ref.astype(np.int32))

    def test_threaded_result_identical(self, rng):
        x = random_pm1(rng, (10, 10, 3))
        w = random_pm1(rng, (3, 3, 3, 8))
        k = BinaryKernel(w)
        a = binary_conv2d(pack_bipolar(x), k, padding="same", threads=1)
        b = binary_conv2d(pack_bipolar(x), k, padding="same", threads=4)
        assert np.array_equal(a, b)

    def test_channel_mismatch_rejected(self, rng):
        x = pack_bipolar(random_pm1(rng, (4, 4, 2)))
        k = BinaryKernel(random_pm1(rng, (3, 3, 3, 1)))
        with pytest.raises(ShapeError, match="channels"):
            binary_conv2d(x, k)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ShapeError, match="odd"):
            BinaryKernel(random_pm1(rng, (2, 2, 1, 1)))

    def test_non_pm1_weights_rejected(self):
        with pytest.raises(ShapeError, match="\\+-1"):
            BinaryKernel(np.zeros((3, 3, 1, 1), dtype=np.int8))


class TestBinaryDense:
    def test_matched_vectors_n1024(self):
        x = np.ones((8, 8, 16), dtype=np.int8)
        k = BinaryKernel(np.ones((1, 1, 1024, 1), dtype=np.int8))
        assert binary_dense(pack_bipolar(x), k)[0, 0, 0] == 1024

    def test_opposed_vectors(self):
        x = np.ones((8, 8, 16), dtype=np.int8)
        k = BinaryKernel(np.full((1, 1, 1024, 1), -1, dtype=np.int8))
        assert binary_dense(pack_bipolar(x), k)[0, 0, 0] == -1024

    def test_matches_naive_dot(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 300))
            o = int(rng.integers(1, 5))
            x = random_pm1(rng, (1, 1, n))
            w = random_pm1(rng, (1, 1, n, o))
            bias = rng.integers(-5, 6, size=o).astype(np.int32)
            got = binary_dense(pack_bipolar(x), BinaryKernel(w, bias=bias))
            ref = (
                np.einsum("c,co->o", x[0, 0].astype(np.int64), w[0, 0].astype(np.int64))
                + bias
            )
            assert np.array_equal(got.reshape(-1), ref)


class TestAffineFixed:
    def test_identity(self):
        x = np.array([[[9]]], dtype=np.int32)
        got = affine_fixed(x, FixedAffine.identity())
        assert got[0, 0, 0] == 9 << 16

    def test_exact_dyadic_case(self):
        x = np.array([[[4]]], dtype=np.int32)
        got = affine_fixed(x, FixedAffine.from_scale_bias(0.5, -1.0))
        assert got[0, 0, 0] == 65536

    def test_tracks_float_affine(self, rng):
        # Q16.16 rounding contributes (|x|+1)*2^-17, so the 2^-10 accuracy
        # bound holds for conv-sized inputs |x| <= 127 (3x3 dense over up to
        # 14 channels); the |x| <= 2^14 precondition only guards overflow.
        for _ in range(300):
            scale = float(rng.uniform(-4, 4))
            bias = float(rng.uniform(-8, 8))
            x = rng.integers(-127, 128, size=(3, 3, 1)).astype(np.int32)
            got = affine_fixed(x, FixedAffine.from_scale_bias(scale, bias)) / 2**16
            ref = scale * x.astype(np.float64) + bias
            tol = 2 ** -10 * np.maximum(1.0, np.abs(ref))
            assert (np.abs(got - ref) <= tol).all()

    def test_input_bound_enforced(self):
        x = np.full((1, 1, 1), 2**14 + 1, dtype=np.int32)
        with pytest.raises(RangeOverflowError):
            affine_fixed(x, FixedAffine.identity())

    def test_overflow_rejected(self):
        x = np.full((1, 1, 1), 2**14, dtype=np.int32)
        with pytest.raises(RangeOverflowError):
            affine_fixed(x, FixedAffine.from_scale_bias(2**14, 0.0))

    def test_per_map_matches_scalar(self, rng):
        x = rng.integers(-100, 100, size=(4, 4, 3)).astype(np.int32)
        params = [
            FixedAffine.from_scale_bias(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))
            for _ in range(3)
        ]
        got = affine_fixed_per_map(x, params)
        for i, p in enumerate(params):
            assert np.array_equal(got[:, :, i], affine_fixed(x[:, :, i : i + 1], p)[:, :, 0])


class TestFoldBnToThreshold:
    def test_identity_bn(self):
        assert fold_bn_to_threshold(FloatAffine(1, 0, 1, 0)) == (0, 1)

    def test_negative_scale_flips_polarity(self):
        t, pol = fold_bn_to_threshold(FloatAffine(-1, 0, 1, 0))
        assert pol == -1
        # sign(-x) >= 0 iff x <= 0 iff x < 1
        assert t == 1

    def test_exhaustive_agreement_with_float_sign(self, rng):
        for _ in range(400):
            p = FloatAffine(
                gamma=float(rng.uniform(-4, 4)) or 1.0,
                mu=float(rng.uniform(-6, 6)),
                sigma=float(rng.uniform(0.1, 5.0)),
                beta=float(rng.uniform(-4, 4)),
            )
            if abs(p.gamma) < 1e-6:
                continue
            t, pol = fold_bn_to_threshold(p)
            for x in range(-9, 10):
                want = 1 if p.gamma * (x - p.mu) / p.sigma + p.beta >= 0 else -1
                got = pol * (1 if x >= t else -1)
                assert got == want, (p, x, t, pol)

    def test_degenerate_gamma_rejected(self):
        with pytest.raises(BpbnError, match="gamma"):
            fold_bn_to_threshold(FloatAffine(0.0, 0, 1, 0))

    def test_threshold_to_bits_matches_scalar_rule(self, rng):
        x = rng.integers(-9, 10, size=(5, 5, 4)).astype(np.int32)
        params = [
            FloatAffine(float(rng.uniform(-2, 2)) or 1.0, float(rng.uniform(-3, 3)),
                        float(rng.uniform(0.2, 2.0)), float(rng.uniform(-2, 2)))
            for _ in range(4)
        ]
        folded = [fold_bn_to_threshold(p) for p in params]
        bits = threshold_to_bits(x, [t for t, _ in folded], [s for _, s in folded])
        vals = unpack_bipolar(bits)
        for m, p in enumerate(params):
            want = np.where(p.apply(x[:, :, m]) >= 0, 1, -1)
            assert np.array_equal(vals[:, :, m], want)


class TestSignToBits:
    def test_tie_rule_at_zero(self):
        x = np.array([-3, 0, 7], dtype=np.int32).reshape(1, 1, 3)
        assert unpack_bipolar(sign_to_bits(x)).reshape(-1).tolist() == [-1, 1, 1]

    def test_all_positive_gives_zero_words(self):
        x = np.arange(1, 10, dtype=np.int32).reshape(3, 3, 1)
        assert sign_to_bits(x).words.tolist() == [0]

    def test_matches_elementwise_rule(self, rng):
        x = rng.integers(-50, 51, size=(6, 5, 4)).astype(np.int32)
        got = unpack_bipolar(sign_to_bits(x))
        assert np.array_equal(got, np.where(x >= 0, 1, -1))


class TestMaxpool2:
    def test_any_plus_one_wins(self):
        x = np.array([1, -1, -1, -1], dtype=np.int8).reshape(2, 2, 1)
        pooled = maxpool2(pack_bipolar(x))
        assert unpack_bipolar(pooled)[0, 0, 0] == 1

    def test_all_minus_one_stays(self):
        x = np.full((2, 2, 1), -1, dtype=np.int8)
        assert unpack_bipolar(maxpool2(pack_bipolar(x)))[0, 0, 0] == -1

    def test_accum_matches_naive(self, rng):
        x = rng.integers(-99, 100, size=(8, 8, 3)).astype(np.int32)
        got = maxpool2(x)
        for i in range(4):
            for j in range(4):
                for c in range(3):
                    assert got[i, j, c] == x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, c].max()

    def test_bits_match_naive(self, rng):
        x = random_pm1(rng, (8, 8, 2))
        got = unpack_bipolar(maxpool2(pack_bipolar(x)))
        for i in range(4):
            for j in range(4):
                for c in range(2):
                    assert got[i, j, c] == x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, c].max()

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeError, match="even"):
            maxpool2(np.zeros((3, 4, 1), dtype=np.int32))


class TestInt8Conv2d:
    def test_identity_pointwise(self, rng):
        img = rng.integers(0, 256, size=(5, 5, 1), dtype=np.uint8)
        w = np.ones((1, 1, 1, 1), dtype=np.int8)
        assert np.array_equal(int8_conv2d(img, w)[:, :, 0], img[:, :, 0].astype(np.int32))

    def test_zero_weights_give_bias(self, rng):
        img = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        w = np.zeros((3, 3, 3, 2), dtype=np.int8)
        out = int8_conv2d(img, w, bias=[7, -2], padding="same")
        assert (out[:, :, 0] == 7).all() and (out[:, :, 1] == -2).all()

    def test_matches_naive(self, rng):
        img = rng.integers(0, 256, size=(7, 6, 3), dtype=np.uint8)
        w = rng.integers(-127, 128, size=(3, 3, 3, 4), dtype=np.int8)
        bias = rng.integers(-100, 100, size=4).astype(np.int32)
        got = int8_conv2d(img, w, bias=bias, padding="valid")
        x = img.astype(np.int64)
        for i in range(5):
            for j in range(4):
                for o in range(4):
                    want = np.sum(x[i : i + 3, j : j + 3, :] * w[:, :, :, o]) + bias[o]
                    assert got[i, j, o] == want

    def test_shape_mismatch_rejected(self, rng):
        img = rng.integers(0, 256, size=(4, 4, 2), dtype=np.uint8)
        with pytest.raises(ShapeError):
            int8_conv2d(img, np.ones((3, 3, 3, 1), dtype=np.int8))
