"""Tests for simulation, IDX ingestion, standardization, and transforms."""

import gzip
import struct

import numpy as np
import pytest
from scipy import ndimage

from nodegibbs.data import (
    ImageTransformConfig,
    PixelStats,
    TransformKind,
    XorSimConfig,
    augment,
    gaussian_kernel,
    load_idx,
    read_xor_csv,
    simulate_noisy_xor,
    standardize,
    write_idx,
    write_xor_csv,
)
from nodegibbs.errors import ConfigError, DataFormatError
from nodegibbs.mlp import LabeledDataset


class TestSimulateNoisyXor:
    def test_default_sizes_and_balance(self):
        train, test = simulate_noisy_xor(XorSimConfig(seed=3))
        assert train.size == 5000 and test.size == 1200
        assert train.feature_dim == test.feature_dim == 2
        for data in (train, test):
            assert np.sum(data.labels == 0) == data.size // 2
            assert np.sum(data.labels == 1) == data.size // 2

    def test_labels_match_nearest_corner_parity(self):
        # Width < 0.5 keeps each point nearest its own corner, so the
        # label must equal the XOR of the rounded coordinates.
        train, test = simulate_noisy_xor(XorSimConfig(400, 400, 0.49, seed=11))
        for data in (train, test):
            rounded = (data.inputs > 0.5).astype(np.int64)
            assert np.array_equal(data.labels, rounded[:, 0] ^ rounded[:, 1])

    def test_noise_stays_within_width(self):
        width = 0.25
        train, _ = simulate_noisy_xor(XorSimConfig(2000, 400, width, seed=5))
        corners = np.round(train.inputs)
        offsets = np.abs(train.inputs - corners)
        assert offsets.max() <= width
        # Noise should actually reach most of the box, not collapse.
        assert offsets.max() > 0.9 * width

    def test_corner_counts_exact(self):
        train, _ = simulate_noisy_xor(XorSimConfig(80, 40, 0.1, seed=0))
        corners = np.round(train.inputs)
        for corner in ([0, 0], [0, 1], [1, 0], [1, 1]):
            assert np.sum((corners == corner).all(axis=1)) == 20

    def test_zero_width_sits_on_corners(self):
        train, _ = simulate_noisy_xor(XorSimConfig(8, 4, 0.0, seed=1))
        assert np.array_equal(np.round(train.inputs), train.inputs)

    def test_seed_determinism(self):
        a_train, a_test = simulate_noisy_xor(XorSimConfig(seed=42))
        b_train, b_test = simulate_noisy_xor(XorSimConfig(seed=42))
        c_train, _ = simulate_noisy_xor(XorSimConfig(seed=43))
        assert np.array_equal(a_train.inputs, b_train.inputs)
        assert np.array_equal(a_test.inputs, b_test.inputs)
        assert not np.array_equal(a_train.inputs, c_train.inputs)

    def test_train_and_test_differ(self):
        train, test = simulate_noisy_xor(XorSimConfig(400, 400, 0.4, seed=9))
        assert not np.array_equal(train.inputs, test.inputs)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"train_size": 10},
            {"test_size": 0},
            {"train_size": -4},
            {"noise_width": 0.5},
            {"noise_width": -0.1},
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            XorSimConfig(**kwargs)


class TestXorCsv:
    def test_round_trip_exact(self, tmp_path):
        train, _ = simulate_noisy_xor(XorSimConfig(100, 4, 0.4, seed=7))
        path = tmp_path / "train.csv"
        write_xor_csv(path, train)
        loaded = read_xor_csv(path)
        assert np.array_equal(loaded.inputs, train.inputs)
        assert np.array_equal(loaded.labels, train.labels)

    def test_header_written(self, tmp_path):
        train, _ = simulate_noisy_xor(XorSimConfig(4, 4, 0.1, seed=0))
        path = tmp_path / "t.csv"
        write_xor_csv(path, train)
        assert path.read_text().splitlines()[0] == "x1,x2,label"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,0\n")
        with pytest.raises(DataFormatError):
            read_xor_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x1,x2,label\n")
        with pytest.raises(DataFormatError):
            read_xor_csv(path)


def _pack_images(pixels, rows, cols, magic=2051):
    flat = bytes(pixels)
    count = len(pixels) // (rows * cols)
    return struct.pack(">IIII", magic, count, rows, cols) + flat


def _pack_labels(labels, magic=2049):
    return struct.pack(">II", magic, len(labels)) + bytes(labels)


class TestLoadIdx:
    # Two 2x2 images and labels built byte-by-byte, independent of the
    # package writer.
    PIXELS = [0, 1, 2, 3, 250, 251, 252, 253]
    LABELS = [0, 9]

    def _write_pair(self, tmp_path, images_bytes, labels_bytes, gz=False):
        suffix = ".gz" if gz else ""
        img = tmp_path / f"images{suffix}"
        lab = tmp_path / f"labels{suffix}"
        img.write_bytes(gzip.compress(images_bytes) if gz else images_bytes)
        lab.write_bytes(gzip.compress(labels_bytes) if gz else labels_bytes)
        return img, lab

    def test_reads_plain_pair(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path, _pack_images(self.PIXELS, 2, 2), _pack_labels(self.LABELS)
        )
        data = load_idx(img, lab)
        assert data.inputs.shape == (2, 4)
        assert data.inputs.dtype == np.float64
        assert np.array_equal(data.inputs[0], [0, 1, 2, 3])
        assert np.array_equal(data.inputs[1], [250, 251, 252, 253])
        # Stored labels 0..9 become classes 1..10.
        assert np.array_equal(data.labels, [1, 10])

    def test_reads_gzipped_pair(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path,
            _pack_images(self.PIXELS, 2, 2),
            _pack_labels(self.LABELS),
            gz=True,
        )
        data = load_idx(img, lab)
        assert np.array_equal(data.inputs[1], [250, 251, 252, 253])
        assert np.array_equal(data.labels, [1, 10])

    def test_bad_image_magic(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path,
            _pack_images(self.PIXELS, 2, 2, magic=2052),
            _pack_labels(self.LABELS),
        )
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(img, lab)

    def test_bad_label_magic(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path,
            _pack_images(self.PIXELS, 2, 2),
            _pack_labels(self.LABELS, magic=2051),
        )
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(img, lab)

    def test_truncated_images(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path, _pack_images(self.PIXELS, 2, 2)[:-3], _pack_labels(self.LABELS)
        )
        with pytest.raises(DataFormatError, match="truncated"):
            load_idx(img, lab)

    def test_truncated_label_header(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path, _pack_images(self.PIXELS, 2, 2), _pack_labels(self.LABELS)[:5]
        )
        with pytest.raises(DataFormatError, match="truncated"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, lab = self._write_pair(
            tmp_path, _pack_images(self.PIXELS, 2, 2), _pack_labels([0, 9, 3])
        )
        with pytest.raises(DataFormatError, match="labels for"):
            load_idx(img, lab)


class TestWriteIdx:
    def _random_images(self, rng, size, side):
        pixels = rng.integers(0, 256, size=(size, side * side)).astype(np.float64)
        labels = rng.integers(1, 11, size=size).astype(np.int64)
        return LabeledDataset(pixels, labels)

    def test_round_trip_plain(self, tmp_path):
        data = self._random_images(np.random.default_rng(0), 7, 5)
        write_idx(tmp_path / "img", tmp_path / "lab", data)
        loaded = load_idx(tmp_path / "img", tmp_path / "lab")
        assert np.array_equal(loaded.inputs, data.inputs)
        assert np.array_equal(loaded.labels, data.labels)

    def test_round_trip_gzip(self, tmp_path):
        data = self._random_images(np.random.default_rng(1), 4, 28)
        write_idx(tmp_path / "img.gz", tmp_path / "lab.gz", data)
        assert (tmp_path / "img.gz").read_bytes()[:2] == b"\x1f\x8b"
        loaded = load_idx(tmp_path / "img.gz", tmp_path / "lab.gz")
        assert np.array_equal(loaded.inputs, data.inputs)
        assert np.array_equal(loaded.labels, data.labels)

    def test_fractional_pixels_round_and_clip(self, tmp_path):
        data = LabeledDataset(np.array([[-3.0, 0.4, 254.6, 300.0]]), np.array([2]))
        write_idx(tmp_path / "img", tmp_path / "lab", data)
        loaded = load_idx(tmp_path / "img", tmp_path / "lab")
        assert np.array_equal(loaded.inputs[0], [0, 0, 255, 255])

    def test_non_square_rejected(self, tmp_path):
        data = LabeledDataset(np.zeros((2, 6)), np.array([1, 2]))
        with pytest.raises(DataFormatError, match="square"):
            write_idx(tmp_path / "img", tmp_path / "lab", data)


class TestStandardize:
    def test_train_stats_are_global_scalars(self):
        inputs = np.array([[0.0, 255.0], [128.0, 64.0]])
        data = LabeledDataset(inputs, np.array([1, 2]))
        scaled, stats = standardize(data)
        # One scalar pair over all pixels, not per-feature columns.
        mean = (0.0 + 255.0 + 128.0 + 64.0) / 4.0
        var = sum((v - mean) ** 2 for v in (0.0, 255.0, 128.0, 64.0)) / 4.0
        assert stats.mean == pytest.approx(mean, abs=1e-12)
        assert stats.std == pytest.approx(np.sqrt(var), rel=1e-12)
        np.testing.assert_allclose(
            scaled.inputs, (inputs - stats.mean) / stats.std, atol=1e-15
        )
        assert scaled.inputs.mean() == pytest.approx(0.0, abs=1e-12)
        assert scaled.inputs.std() == pytest.approx(1.0, rel=1e-12)

    def test_test_set_reuses_train_stats(self):
        rng = np.random.default_rng(4)
        train = LabeledDataset(rng.uniform(0, 255, (50, 9)), np.ones(50, np.int64))
        test = LabeledDataset(rng.uniform(0, 255, (20, 9)), np.ones(20, np.int64))
        _, stats = standardize(train)
        scaled_test, echoed = standardize(test, stats)
        assert echoed is stats
        np.testing.assert_allclose(
            scaled_test.inputs, (test.inputs - stats.mean) / stats.std, atol=1e-15
        )
        # The test set keeps the train scale rather than renormalizing.
        assert abs(scaled_test.inputs.mean()) > 0

    def test_constant_pixels_rejected(self):
        data = LabeledDataset(np.full((3, 4), 7.0), np.array([1, 1, 2]))
        with pytest.raises(DataFormatError, match="constant"):
            standardize(data)

    def test_zero_std_stats_rejected(self):
        data = LabeledDataset(np.ones((2, 2)), np.array([1, 2]))
        with pytest.raises(DataFormatError, match="zero std"):
            standardize(data, PixelStats(0.0, 0.0))


class TestGaussianKernel:
    def test_normalized_and_symmetric(self):
        for size, sigma in [(9, 1.0), (9, 1.5), (3, 0.7)]:
            kernel = gaussian_kernel(size, sigma)
            assert kernel.shape == (size, size)
            assert abs(kernel.sum() - 1.0) <= 1e-12
            np.testing.assert_array_equal(kernel, kernel.T)
            np.testing.assert_array_equal(kernel, kernel[::-1, ::-1])

    def test_center_to_corner_ratio(self):
        # For a 3x3 kernel the corner sits at squared distance 2 and the
        # edge at 1, so center/corner = exp(1/sigma^2).
        sigma = 1.3
        kernel = gaussian_kernel(3, sigma)
        assert kernel[1, 1] / kernel[0, 0] == pytest.approx(
            np.exp(1.0 / sigma**2), rel=1e-12
        )
        assert kernel[1, 1] == kernel.max()


def _flat_images(rng, size, side=7):
    pixels = rng.uniform(5.0, 250.0, size=(size, side * side))
    labels = rng.integers(1, 11, size=size).astype(np.int64)
    return LabeledDataset(pixels, labels)


class TestAugment:
    def test_inversion_certain_is_involution(self):
        # Integer-valued pixels (the raw IDX domain) invert exactly.
        rng = np.random.default_rng(0)
        data = LabeledDataset(
            rng.integers(0, 256, size=(12, 49)).astype(np.float64),
            rng.integers(1, 11, size=12).astype(np.int64),
        )
        config = ImageTransformConfig(inversion_probability=1.0, seed=5)
        once = augment(data, TransformKind.INVERSION, config)
        twice = augment(once, TransformKind.INVERSION, config)
        np.testing.assert_array_equal(once.inputs, 255.0 - data.inputs)
        np.testing.assert_array_equal(twice.inputs, data.inputs)

    def test_inversion_never_is_identity(self):
        data = _flat_images(np.random.default_rng(1), 6)
        config = ImageTransformConfig(inversion_probability=0.0, seed=5)
        out = augment(data, TransformKind.INVERSION, config)
        np.testing.assert_array_equal(out.inputs, data.inputs)
        assert out.inputs is not data.inputs

    def test_inversion_rate_near_half(self):
        size = 400
        data = LabeledDataset(
            np.full((size, 16), 10.0), np.ones(size, dtype=np.int64)
        )
        out = augment(data, "inversion", ImageTransformConfig(seed=21))
        inverted = np.sum(out.inputs[:, 0] == 245.0)
        assert np.sum(out.inputs[:, 0] == 10.0) + inverted == size
        # Binomial(400, 0.5): +-4 standard deviations.
        assert 160 <= inverted <= 240

    def test_rotation_zero_degrees_is_identity(self):
        data = _flat_images(np.random.default_rng(2), 5)
        out = augment(data, "rotation", ImageTransformConfig(rotation_degrees=0.0))
        np.testing.assert_allclose(out.inputs, data.inputs, atol=1e-12)

    def test_rotation_fixes_center_pixel(self):
        # Bilinear rotation about the center leaves the exact center of
        # an odd-sided image in place.
        data = _flat_images(np.random.default_rng(3), 20, side=7)
        out = augment(data, "rotation", ImageTransformConfig(seed=9))
        center = (7 * 7) // 2
        np.testing.assert_allclose(
            out.inputs[:, center], data.inputs[:, center], atol=1e-9
        )
        assert not np.allclose(out.inputs, data.inputs)

    def test_rotation_matches_manual_replay(self):
        data = _flat_images(np.random.default_rng(4), 6, side=9)
        config = ImageTransformConfig(seed=31)
        out = augment(data, "rotation", config)
        for i in range(data.size):
            rng = np.random.default_rng([31, i])
            angle = rng.uniform(-30.0, 30.0)
            expected = ndimage.rotate(
                data.inputs[i].reshape(9, 9),
                angle,
                reshape=False,
                order=1,
                mode="constant",
                cval=0.0,
            ).ravel()
            np.testing.assert_array_equal(
                out.inputs[i], np.clip(expected, 0.0, 255.0)
            )

    def test_blur_matches_manual_replay(self):
        data = _flat_images(np.random.default_rng(5), 8, side=9)
        config = ImageTransformConfig(seed=17)
        out = augment(data, "blur", config)
        applied = 0
        for i in range(data.size):
            rng = np.random.default_rng([17, i])
            if rng.uniform() < 0.9:
                sigma = rng.uniform(1.0, 1.5)
                expected = ndimage.convolve(
                    data.inputs[i].reshape(9, 9),
                    gaussian_kernel(9, sigma),
                    mode="constant",
                    cval=0.0,
                ).ravel()
                expected = np.clip(expected, 0.0, 255.0)
                applied += 1
            else:
                expected = data.inputs[i]
            np.testing.assert_array_equal(out.inputs[i], expected)
        assert 0 < applied <= data.size

    def test_blur_preserves_constant_interior(self):
        # A normalized kernel maps a constant image to the same constant
        # wherever the 9x9 window stays inside; zero fill dims the border.
        size = 28
        data = LabeledDataset(
            np.full((1, size * size), 100.0), np.array([3], dtype=np.int64)
        )
        out = augment(data, "blur", ImageTransformConfig(blur_probability=1.0))
        image = out.inputs[0].reshape(size, size)
        assert image[14, 14] == pytest.approx(100.0, abs=1e-9)
        assert image[0, 0] < 100.0

    def test_blur_rate_near_nine_tenths(self):
        size = 200
        data = LabeledDataset(
            np.full((size, 25), 100.0), np.ones(size, dtype=np.int64)
        )
        out = augment(data, "blur", ImageTransformConfig(seed=2))
        changed = np.sum(out.inputs[:, 0] != 100.0)
        # Binomial(200, 0.9): +-4 standard deviations ~ 17.
        assert 163 <= changed <= 197

    def test_results_do_not_depend_on_processing_order(self):
        # Per-image streams keyed on (seed, index) make a prefix of the
        # dataset transform identically to the same rows in a full pass.
        data = _flat_images(np.random.default_rng(6), 10)
        config = ImageTransformConfig(seed=13)
        full = augment(data, "rotation", config)
        prefix = augment(data.subset(np.arange(4)), "rotation", config)
        np.testing.assert_array_equal(full.inputs[:4], prefix.inputs)

    def test_labels_and_shape_untouched(self):
        data = _flat_images(np.random.default_rng(7), 9)
        for kind in TransformKind:
            out = augment(data, kind, ImageTransformConfig(seed=1))
            assert out.inputs.shape == data.inputs.shape
            assert np.array_equal(out.labels, data.labels)
            assert out.inputs.min() >= 0.0 and out.inputs.max() <= 255.0

    def test_non_square_rotation_rejected(self):
        data = LabeledDataset(np.zeros((2, 6)), np.array([1, 1], dtype=np.int64))
        with pytest.raises(DataFormatError, match="square"):
            augment(data, "rotation", ImageTransformConfig())

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rotation_degrees": -1.0},
            {"blur_probability": 1.5},
            {"inversion_probability": -0.2},
            {"blur_kernel_size": 8},
            {"blur_sigma_range": (1.5, 1.0)},
            {"blur_sigma_range": (0.0, 1.0)},
        ],
    )
    def test_invalid_transform_config(self, kwargs):
        with pytest.raises(ConfigError):
            ImageTransformConfig(**kwargs)
