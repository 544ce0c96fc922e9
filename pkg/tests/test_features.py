"""Feature extraction: 3x3 convolutions, group norm, and the two extractors.

conv3x3 is cross-correlation with zero padding, out[y, x, o] =
bias[o] + sum kernel[o, c, ky, kx] * in[y + (ky-1)*d, x + (kx-1)*d, c].
The tests pin that contract with delta kernels and an independent
quadruple-loop reference, then cover the weight container plumbing and
the fixed photometric descriptor's channel layout.
"""

import numpy as np
import pytest

from mvsweep import features
from mvsweep.errors import ChannelMismatchError, WeightGraphMismatchError


def _conv_reference(x, kernel, bias=None, dilation=1):
    """Literal per-pixel evaluation of the conv3x3 contract."""
    height, width, _ = x.shape
    out_ch = kernel.shape[0]
    out = np.zeros((height, width, out_ch))
    for y in range(height):
        for xc in range(width):
            for o in range(out_ch):
                acc = 0.0 if bias is None else float(bias[o])
                for ky in range(3):
                    for kx in range(3):
                        yy = y + (ky - 1) * dilation
                        xx = xc + (kx - 1) * dilation
                        if 0 <= yy < height and 0 <= xx < width:
                            acc += float(kernel[o, :, ky, kx] @ x[yy, xx, :])
                out[y, xc, o] = acc
    return out


class TestConv3x3:
    """Delta-kernel identities and a brute-force reference comparison."""

    def test_center_delta_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 6, 2))
        kernel = np.zeros((2, 2, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        kernel[1, 1, 1, 1] = 1.0
        np.testing.assert_allclose(features.conv3x3(x, kernel), x, atol=1e-14)

    def test_corner_delta_shifts(self):
        # Tap (ky=0, kx=0) reads in[y-1, x-1]; the first row/column read
        # the zero padding.
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 5, 1))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 0, 0] = 1.0
        out = features.conv3x3(x, kernel)
        np.testing.assert_allclose(out[1:, 1:], x[:-1, :-1], atol=1e-14)
        assert np.all(out[0, :] == 0.0) and np.all(out[:, 0] == 0.0)

    def test_dilation_widens_reach(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 6, 1))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 0, 0] = 1.0
        out = features.conv3x3(x, kernel, dilation=2)
        np.testing.assert_allclose(out[2:, 2:], x[:-2, :-2], atol=1e-14)
        assert np.all(out[:2, :] == 0.0)

    def test_bias_is_added(self):
        x = np.zeros((3, 3, 1))
        kernel = np.zeros((2, 1, 3, 3))
        out = features.conv3x3(x, kernel, bias=np.array([1.5, -2.0]))
        np.testing.assert_allclose(out[..., 0], 1.5, atol=1e-15)
        np.testing.assert_allclose(out[..., 1], -2.0, atol=1e-15)

    def test_matches_reference_loop(self):
        rng = np.random.default_rng(3)
        for dilation in (1, 2, 3):
            x = rng.normal(size=(5, 7, 3))
            kernel = rng.normal(size=(4, 3, 3, 3))
            bias = rng.normal(size=4)
            got = features.conv3x3(x, kernel, bias, dilation)
            want = _conv_reference(x, kernel, bias, dilation)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ChannelMismatchError):
            features.conv3x3(np.zeros((4, 4, 2)), np.zeros((1, 3, 3, 3)))


class TestGroupNormRelu:
    """Per-group statistics over all pixels of one map, then ReLU."""

    def test_two_value_hand_case(self):
        # Values {1, 3}: mean 2, population variance 1, so the normalized
        # values are -/+ 1/sqrt(1 + eps).
        x = np.array([[[1.0], [3.0]]])
        out = features.group_norm_relu(x, np.array([2.0]), np.array([1.0]), groups=1)
        unit = 1.0 / np.sqrt(1.0 + features.GN_EPS)
        expected = np.maximum(np.array([[[1.0 - 2.0 * unit], [1.0 + 2.0 * unit]]]), 0.0)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        assert out[0, 0, 0] == 0.0  # ReLU clamps the negative side

    def test_groups_are_independent(self):
        # Channel pair (0, 1) is one group, (2, 3) the other; a constant
        # group normalizes to zero regardless of the other group's spread.
        rng = np.random.default_rng(4)
        x = np.concatenate(
            [np.full((3, 4, 2), 7.0), rng.normal(size=(3, 4, 2))], axis=2
        )
        out = features.group_norm_relu(
            x, np.ones(4), np.zeros(4), groups=2
        )
        np.testing.assert_allclose(out[..., :2], 0.0, atol=1e-12)
        assert out[..., 2:].std() > 0.1

    def test_statistics_match_numpy(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 5, 6))
        scale = rng.uniform(0.5, 1.5, size=6)
        shift = rng.normal(size=6)
        out = features.group_norm_relu(x, scale, shift, groups=3)
        ref = np.empty_like(x)
        for g in range(3):
            block = x[..., 2 * g:2 * g + 2]
            normed = (block - block.mean()) / np.sqrt(block.var() + features.GN_EPS)
            ref[..., 2 * g:2 * g + 2] = normed
        ref = np.maximum(ref * scale + shift, 0.0)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_indivisible_groups_raise(self):
        with pytest.raises(ChannelMismatchError):
            features.group_norm_relu(np.zeros((2, 2, 5)), np.ones(5), np.zeros(5), groups=2)


class TestDrenetWeights:
    """Weight container construction, serialization, and validation."""

    def test_random_weights_are_deterministic(self):
        a = features.random_drenet_weights(seed=9).to_tensors()
        b = features.random_drenet_weights(seed=9).to_tensors()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_kernels_are_float32_representable_and_bounded(self):
        tensors = features.random_drenet_weights(seed=0).to_tensors()
        for name, value in tensors.items():
            if not name.endswith(".kernel"):
                continue
            np.testing.assert_array_equal(
                value, value.astype(np.float32).astype(np.float64)
            )
            bound = 1.0 / np.sqrt(value.shape[1] * 9.0)
            assert np.abs(value).max() <= bound + 1e-12, name

    def test_tensor_round_trip(self):
        tensors = features.random_drenet_weights(seed=3).to_tensors()
        back = features.DrenetWeights.from_tensors(tensors).to_tensors()
        assert tensors.keys() == back.keys()
        for name in tensors:
            np.testing.assert_array_equal(tensors[name], back[name])

    def test_missing_tensor_raises(self):
        tensors = features.random_drenet_weights(seed=3).to_tensors()
        del tensors["fuse.kernel"]
        with pytest.raises(WeightGraphMismatchError):
            features.DrenetWeights.from_tensors(tensors)

    def test_wrong_shape_raises(self):
        # The trunk layer's width is part of the fixed graph, so a fatter
        # kernel must be rejected (stem input width alone is flexible).
        tensors = features.random_drenet_weights(seed=3).to_tensors()
        tensors["grow.kernel"] = np.zeros((32, 32, 3, 3))
        with pytest.raises(WeightGraphMismatchError):
            features.DrenetWeights.from_tensors(tensors)


class TestDrenetForward:
    """Learned-extractor forward pass plumbing."""

    def test_output_shape(self):
        rng = np.random.default_rng(6)
        w = features.random_drenet_weights(seed=1)
        out = features.drenet_forward(rng.uniform(size=(10, 12, 3)), w)
        assert out.shape == (10, 12, 32)
        assert np.all(np.isfinite(out))

    def test_grayscale_replicates_channels(self):
        rng = np.random.default_rng(7)
        w = features.random_drenet_weights(seed=2)
        gray = rng.uniform(size=(6, 8))
        mono = features.drenet_forward(gray, w)
        tri = features.drenet_forward(np.repeat(gray[:, :, None], 3, axis=2), w)
        np.testing.assert_allclose(mono, tri, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        w = features.random_drenet_weights(seed=4)
        img = rng.uniform(size=(6, 6, 3))
        np.testing.assert_array_equal(
            features.drenet_forward(img, w), features.drenet_forward(img, w)
        )

    def test_rejects_two_channel_input(self):
        w = features.random_drenet_weights(seed=0)
        with pytest.raises(ChannelMismatchError):
            features.drenet_forward(np.zeros((4, 4, 2)), w)


class TestPhotometricFeatures:
    """Fixed descriptor: gray, mean-removed patch, central gradients."""

    def test_constant_image_only_gray(self):
        out = features.photometric_features(np.full((5, 6), 0.25))
        np.testing.assert_array_equal(out[..., 0], 0.25)
        # Edge replication makes patch and gradient channels exactly zero.
        np.testing.assert_array_equal(out[..., 1:], 0.0)

    def test_gray_coefficients(self):
        # Pure red/green/blue pixels weigh 0.299 / 0.587 / 0.114.
        img = np.zeros((1, 3, 3))
        img[0, 0, 0] = 1.0
        img[0, 1, 1] = 1.0
        img[0, 2, 2] = 1.0
        out = features.photometric_features(img)
        np.testing.assert_allclose(out[0, :, 0], [0.299, 0.587, 0.114], atol=1e-15)

    def test_ramp_gradients(self):
        # gray[y, x] = x: interior d/dx = 1, border d/dx = 1/2 under edge
        # replication; d/dy = 0 everywhere.
        gray = np.broadcast_to(np.arange(6.0), (4, 6)).copy()
        out = features.photometric_features(gray)
        np.testing.assert_allclose(out[:, 1:-1, 10], 1.0, atol=1e-14)
        np.testing.assert_allclose(out[:, 0, 10], 0.5, atol=1e-14)
        np.testing.assert_allclose(out[:, -1, 10], 0.5, atol=1e-14)
        np.testing.assert_allclose(out[..., 11], 0.0, atol=1e-14)

    def test_patch_channels_at_center(self):
        # 3x3 image 0..8: the center pixel's neighborhood is the whole
        # image, mean 4, so channels 1..9 hold [-4, -3, ..., 4].
        gray = np.arange(9.0).reshape(3, 3)
        out = features.photometric_features(gray)
        np.testing.assert_allclose(out[1, 1, 1:10], np.arange(9.0) - 4.0, atol=1e-14)

    def test_patch_mean_always_removed(self):
        rng = np.random.default_rng(9)
        out = features.photometric_features(rng.uniform(size=(7, 8)))
        np.testing.assert_allclose(out[..., 1:10].sum(axis=2), 0.0, atol=1e-12)

    def test_padding_channels_zero(self):
        rng = np.random.default_rng(10)
        out = features.photometric_features(rng.uniform(size=(5, 5, 3)))
        assert out.shape == (5, 5, 32)
        np.testing.assert_array_equal(out[..., 12:], 0.0)

    def test_rejects_bad_channel_counts(self):
        with pytest.raises(ChannelMismatchError):
            features.photometric_features(np.zeros((4, 4, 2)))
        with pytest.raises(ChannelMismatchError):
            features.photometric_features(np.zeros((2, 4, 4, 3)))
