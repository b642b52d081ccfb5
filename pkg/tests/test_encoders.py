"""Bit-plane rearrangement and the DBID/thermometer/BIL encoders."""

import numpy as np
import pytest

from bpbn.binops import BinaryKernel, FixedAffine
from bpbn.encoders import (
    bit_rearrange,
    encode_bil,
    encode_dbid,
    encode_thermometer,
    thermometer_thresholds,
)
from bpbn.errors import ShapeError
from bpbn.tensors import unpack_bipolar


def const_image(value, h=1, w=1, c=1):
    return np.full((h, w, c), value, dtype=np.uint8)


class TestBitRearrange:
    def test_binary_expansion_146(self):
        stack = bit_rearrange(const_image(146), planes=8)
        set_planes = [bp for bp in range(8) if stack.plane(0, bp).bits()[0, 0, 0]]
        assert set_planes == [1, 4, 7]  # 146 = 0b10010010

    def test_zero_pixel_sets_nothing(self):
        stack = bit_rearrange(const_image(0), planes=8)
        assert all(stack.plane(0, bp).words.sum() == 0 for bp in range(8))

    def test_255_highest_four(self):
        stack = bit_rearrange(const_image(255), planes=4)
        assert stack.bit_positions == (4, 5, 6, 7)
        assert all(stack.plane(0, bp).bits()[0, 0, 0] == 1 for bp in (4, 5, 6, 7))

    def test_reconstruction_exhaustive(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
        stack = bit_rearrange(img, planes=8)
        total = np.zeros((16, 16), dtype=np.int64)
        for bp in range(8):
            total += stack.plane(0, bp).bits()[:, :, 0].astype(np.int64) << bp
        assert np.array_equal(total, img[:, :, 0])

    def test_plane_count_range_checked(self):
        with pytest.raises(ShapeError):
            bit_rearrange(const_image(1), planes=0)
        with pytest.raises(ShapeError):
            bit_rearrange(const_image(1), planes=9)

    def test_set_bit_maps_to_minus_one(self):
        stack = bit_rearrange(const_image(255), planes=8)
        assert unpack_bipolar(stack.plane(0, 7))[0, 0, 0] == -1


class TestEncodeDbid:
    def test_pixel_146_channel_vector(self):
        t = encode_dbid(const_image(146), planes=8)
        assert t.dims == (1, 1, 8)
        assert t.bits().reshape(-1).tolist() == [0, 1, 0, 0, 1, 0, 0, 1]

    def test_matches_bit_rearrange_planes(self, rng):
        img = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
        t = encode_dbid(img, planes=8)
        stack = bit_rearrange(img, planes=8)
        bits = t.bits()
        for c in range(3):
            for bp in range(8):
                assert np.array_equal(
                    bits[:, :, c * 8 + bp], stack.plane(c, bp).bits()[:, :, 0]
                )

    def test_reconstruction_round_trip(self, rng):
        img = rng.integers(0, 256, size=(6, 7, 2), dtype=np.uint8)
        bits = encode_dbid(img, planes=8).bits().reshape(6, 7, 2, 8)
        weights = 1 << np.arange(8, dtype=np.int64)
        assert np.array_equal(bits @ weights, img.astype(np.int64))

    def test_high_bit_selection(self):
        t = encode_dbid(const_image(0b11110000), planes=4)
        assert t.bits().reshape(-1).tolist() == [1, 1, 1, 1]
        t = encode_dbid(const_image(0b00001111), planes=4)
        assert t.bits().reshape(-1).tolist() == [0, 0, 0, 0]


class TestEncodeThermometer:
    def test_zero_pixel_sets_no_channels(self):
        t = encode_thermometer(const_image(0), k=32)
        assert t.words.sum() == 0

    def test_max_pixel_sets_all_channels(self):
        t = encode_thermometer(const_image(255), k=32)
        assert t.bits().sum() == 32

    def test_mid_pixel_matches_threshold_rule(self):
        t = encode_thermometer(const_image(128), k=32)
        expected = int((128 >= thermometer_thresholds(32)).sum())
        assert t.bits().sum() == expected

    @pytest.mark.parametrize("k", [8, 16, 32])
    def test_monotone_over_all_pixels(self, k):
        img = np.arange(256, dtype=np.uint8).reshape(256, 1, 1)
        counts = encode_thermometer(img, k=k).bits().reshape(256, k).sum(axis=1)
        assert (np.diff(counts) >= 0).all()
        assert counts[0] == 0 and counts[-1] == k

    def test_exactly_k_levels(self):
        img = np.arange(256, dtype=np.uint8).reshape(256, 1, 1)
        counts = encode_thermometer(img, k=32).bits().reshape(256, 32).sum(axis=1)
        assert len(np.unique(counts)) == 33  # 0..32

    def test_k_zero_rejected(self):
        with pytest.raises(ShapeError):
            encode_thermometer(const_image(1), k=0)

    def test_channel_layout_c_major(self, rng):
        img = rng.integers(0, 256, size=(3, 3, 3), dtype=np.uint8)
        t = encode_thermometer(img, k=8)
        bits = t.bits().reshape(3, 3, 3, 8)
        thr = thermometer_thresholds(8)
        for c in range(3):
            want = (img[:, :, c, None].astype(np.int64) >= thr).astype(np.uint8)
            assert np.array_equal(bits[:, :, c, :], want)


class TestEncodeBil:
    def identity_affines(self, k):
        return [FixedAffine.identity() for _ in range(k)]

    def test_uniform_weights_pixel_255(self):
        k = BinaryKernel(np.ones((1, 1, 8, 1), dtype=np.int8))
        out = encode_bil(const_image(255), 8, k, self.identity_affines(1))
        # all bits set -> all -1 -> dot with +1 weights = -8 -> sign -1
        assert unpack_bipolar(out)[0, 0, 0] == -1

    def test_uniform_weights_pixel_0(self):
        k = BinaryKernel(np.ones((1, 1, 8, 1), dtype=np.int8))
        out = encode_bil(const_image(0), 8, k, self.identity_affines(1))
        assert unpack_bipolar(out)[0, 0, 0] == 1

    def test_matches_naive_float_pipeline(self, rng):
        img = rng.integers(0, 256, size=(4, 5, 3), dtype=np.uint8)
        p, kk = 8, 6
        w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, 1, 3 * p, kk))
        # dyadic affines are exact in Q16.16, so the float oracle must agree
        scales = rng.integers(-2**13, 2**13, size=kk) / 2**12
        biases = rng.integers(-2**14, 2**14, size=kk) / 2**12
        bn = [FixedAffine.from_scale_bias(s, b) for s, b in zip(scales, biases)]
        got = unpack_bipolar(encode_bil(img, p, BinaryKernel(w), bn))
        # naive path: unpack bits to +-1, 1x1 conv, affine, sign
        bits = ((img[..., None] >> np.arange(p)) & 1).reshape(4, 5, 3 * p)
        bipolar = 1.0 - 2.0 * bits
        dots = np.einsum("hwc,co->hwo", bipolar, w[0, 0].astype(np.float64))
        ref = np.where(dots * scales + biases >= 0, 1, -1)
        assert np.array_equal(got, ref)

    def test_shape_mismatch_rejected(self, rng):
        k = BinaryKernel(np.ones((1, 1, 9, 2), dtype=np.int8))
        with pytest.raises(ShapeError):
            encode_bil(const_image(0, c=1), 8, k, self.identity_affines(2))

    def test_output_is_channel_only(self, rng):
        img = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        k = BinaryKernel(rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, 1, 24, 16)))
        out = encode_bil(img, 8, k, self.identity_affines(16))
        assert out.dims == (6, 6, 16)
