"""Dataset simulation, IDX image ingestion, standardization, augmentation.

The noisy-XOR generator perturbs the four unit-square corners with
per-coordinate uniform noise; corners (0,0) and (1,1) carry label 0,
the off-diagonal corners label 1. Image datasets arrive as IDX files
(optionally gzipped) with raw [0, 255] pixels; augmentation operates in
that raw pixel space, before standardization.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from nodegibbs.errors import ConfigError, DataFormatError
from nodegibbs.mlp import LabeledDataset

__all__ = [
    "XorSimConfig",
    "simulate_noisy_xor",
    "write_xor_csv",
    "read_xor_csv",
    "load_idx",
    "write_idx",
    "PixelStats",
    "standardize",
    "TransformKind",
    "ImageTransformConfig",
    "gaussian_kernel",
    "augment",
    "write_image_grid_csv",
]

XOR_CORNERS = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_LABELS = np.array([0, 0, 1, 1], dtype=np.int64)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class XorSimConfig:
    """Sizes, noise half-width, and seed for the noisy-XOR simulator.

    Sizes must be divisible by 4 so every corner contributes equally.
    noise_width below 0.5 keeps the clusters from crossing the class
    boundary along either axis.
    """

    train_size: int = 5000
    test_size: int = 1200
    noise_width: float = 0.4
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_size", "test_size"):
            size = getattr(self, name)
            if size <= 0 or size % 4 != 0:
                raise ConfigError(f"{name} must be positive and divisible by 4")
        if not 0.0 <= self.noise_width < 0.5:
            raise ConfigError("noise_width must lie in [0, 0.5)")


def _xor_points(rng: np.random.Generator, size: int, width: float) -> LabeledDataset:
    reps = size // 4
    inputs = np.tile(XOR_CORNERS, (reps, 1))
    inputs = inputs + rng.uniform(-width, width, size=(size, 2))
    return LabeledDataset(inputs, np.tile(XOR_LABELS, reps))


def simulate_noisy_xor(config: XorSimConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced train/test sets of corner points plus uniform box noise."""
    rng = np.random.default_rng(config.seed)
    train = _xor_points(rng, config.train_size, config.noise_width)
    test = _xor_points(rng, config.test_size, config.noise_width)
    return train, test


def write_xor_csv(path: str | Path, data: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "label"])
        for (x1, x2), label in zip(data.inputs, data.labels):
            writer.writerow([f"{x1:.17g}", f"{x2:.17g}", int(label)])


def read_xor_csv(path: str | Path) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x1", "x2", "label"]:
            raise DataFormatError(f"{path}: expected header x1,x2,label")
        rows = [(float(r[0]), float(r[1]), int(r[2])) for r in reader]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.asarray(rows)
    return LabeledDataset(arr[:, :2], arr[:, 2].astype(np.int64))


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path: Path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DataFormatError(f"{path}: truncated, wanted {count} more bytes")
    return data


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """Read an IDX image/label pair into raw [0, 255] rows.

    Images flatten to rows of rows*cols pixels; stored labels 0..9 map
    to classes 1..10. Both files may be gzip-compressed.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic, count, n_rows, n_cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, images_path)
        )
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic {magic}, expected {IDX_IMAGES_MAGIC}"
            )
        raw = _read_exact(fh, count * n_rows * n_cols, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, n_rows * n_cols)

    with _open_maybe_gzip(labels_path) as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic {magic}, expected {IDX_LABELS_MAGIC}"
            )
        raw = _read_exact(fh, label_count, labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8)
    if label_count != count:
        raise DataFormatError(
            f"{labels_path}: {label_count} labels for {count} images"
        )
    return LabeledDataset(images.astype(np.float64), labels.astype(np.int64) + 1)


def write_idx(
    images_path: str | Path,
    labels_path: str | Path,
    data: LabeledDataset,
    image_side: int | None = None,
) -> None:
    """Write a dataset of raw [0, 255] images as an IDX pair.

    Pixels are rounded and clipped into uint8; classes 1..10 store as
    0..9. A .gz suffix on either path gzips that file.
    """
    side = image_side if image_side is not None else _square_side(data)
    if side * side != data.feature_dim:
        raise DataFormatError(
            f"rows of {data.feature_dim} pixels are not {side}x{side} images"
        )
    pixels = np.clip(np.rint(data.inputs), 0, 255).astype(np.uint8)
    labels = (data.labels - 1).astype(np.uint8)

    def _write(path: Path, payload: bytes) -> None:
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wb") as fh:
            fh.write(payload)

    _write(
        Path(images_path),
        struct.pack(">IIII", IDX_IMAGES_MAGIC, data.size, side, side)
        + pixels.tobytes(),
    )
    _write(
        Path(labels_path),
        struct.pack(">II", IDX_LABELS_MAGIC, data.size) + labels.tobytes(),
    )


@dataclass(frozen=True)
class PixelStats:
    """Global scalar mean and standard deviation of training pixels."""

    mean: float
    std: float


def standardize(
    data: LabeledDataset, stats: PixelStats | None = None
) -> tuple[LabeledDataset, PixelStats]:
    """Center and scale all pixels by one global (mean, std) pair.

    Training data computes its own stats; pass those stats back in for
    the test set so both live on the training scale.
    """
    if stats is None:
        mean = float(data.inputs.mean())
        std = float(data.inputs.std())
        if std == 0.0:
            raise DataFormatError("cannot standardize constant-pixel data")
        stats = PixelStats(mean, std)
    if stats.std == 0.0:
        raise DataFormatError("cannot standardize with zero std")
    scaled = (data.inputs - stats.mean) / stats.std
    return LabeledDataset(scaled, data.labels), stats


def write_image_grid_csv(
    path: str | Path,
    original: LabeledDataset,
    transformed: LabeledDataset,
    count: int = 8,
) -> int:
    """Side-by-side pixel dump of the first images, for eyeballing.

    Returns how many images were written.
    """
    count = min(count, original.size, transformed.size)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "label", "pixel", "original", "transformed"])
        for i in range(count):
            label = int(original.labels[i])
            for p in range(original.feature_dim):
                writer.writerow(
                    [
                        i,
                        label,
                        p,
                        f"{original.inputs[i, p]:.17g}",
                        f"{transformed.inputs[i, p]:.17g}",
                    ]
                )
    return count


class TransformKind(Enum):
    ROTATION = "rotation"
    BLUR = "blur"
    INVERSION = "inversion"


@dataclass(frozen=True)
class ImageTransformConfig:
    """Parameters of the three image transforms.

    Angles draw uniformly from [-rotation_degrees, rotation_degrees];
    blur applies with blur_probability using a normalized square kernel
    whose sigma draws from blur_sigma_range; inversion flips pixel p to
    255 - p with inversion_probability.
    """

    rotation_degrees: float = 30.0
    blur_probability: float = 0.9
    blur_kernel_size: int = 9
    blur_sigma_range: tuple[float, float] = (1.0, 1.5)
    inversion_probability: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rotation_degrees < 0:
            raise ConfigError("rotation_degrees must be nonnegative")
        for name in ("blur_probability", "inversion_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.blur_kernel_size % 2 != 1 or self.blur_kernel_size < 1:
            raise ConfigError("blur_kernel_size must be odd and positive")
        lo, hi = self.blur_sigma_range
        if not 0 < lo <= hi:
            raise ConfigError("blur_sigma_range must be increasing and positive")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Explicit normalized size x size Gaussian convolution kernel."""
    offsets = np.arange(size) - (size - 1) / 2.0
    one_d = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kernel = np.outer(one_d, one_d)
    return kernel / kernel.sum()


def _square_side(data: LabeledDataset) -> int:
    side = int(round(np.sqrt(data.feature_dim)))
    if side * side != data.feature_dim:
        raise DataFormatError(
            f"rows of {data.feature_dim} pixels are not square images"
        )
    return side


def augment(
    data: LabeledDataset,
    kind: TransformKind | str,
    config: ImageTransformConfig,
) -> LabeledDataset:
    """Apply one transform per image in raw [0, 255] pixel space.

    Each image gets its own RNG stream keyed on (seed, image index), so
    results do not depend on processing order. Labels pass through
    untouched; outputs are clamped back into [0, 255].
    """
    kind = TransformKind(kind) if isinstance(kind, str) else kind
    if kind is not TransformKind.INVERSION:
        side = _square_side(data)
    out = np.empty_like(data.inputs)
    for i in range(data.size):
        rng = np.random.default_rng([config.seed, i])
        row = data.inputs[i]
        if kind is TransformKind.ROTATION:
            angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
            image = ndimage.rotate(
                row.reshape(side, side),
                angle,
                reshape=False,
                order=1,
                mode="constant",
                cval=0.0,
            ).ravel()
        elif kind is TransformKind.BLUR:
            if rng.uniform() < config.blur_probability:
                sigma = rng.uniform(*config.blur_sigma_range)
                kernel = gaussian_kernel(config.blur_kernel_size, sigma)
                image = ndimage.convolve(
                    row.reshape(side, side), kernel, mode="constant", cval=0.0
                ).ravel()
            else:
                image = row.copy()
        else:
            if rng.uniform() < config.inversion_probability:
                image = 255.0 - row
            else:
                image = row.copy()
        out[i] = np.clip(image, 0.0, 255.0)
    return LabeledDataset(out, data.labels.copy())
