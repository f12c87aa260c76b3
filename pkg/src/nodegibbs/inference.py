"""Posterior-averaged prediction, accuracy, and uncertainty reports.

The predictive pmf of a test point is the mean of the network's output
probabilities over retained posterior samples, renormalized to guard
against float drift. Classification takes the argmax (lowest label on
ties); the binary head thresholds the averaged output probability at
0.5, mapping the boundary to label 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nodegibbs.errors import ConfigError
from nodegibbs.mlp import LabeledDataset, MlpArchitecture, forward

__all__ = [
    "PredictivePmf",
    "UqReport",
    "predictive_pmf",
    "predict_multiclass",
    "predict_binary",
    "posterior_mean_outputs",
    "predictive_accuracy",
    "uq_report",
    "write_predictions_csv",
]

PREDICTIONS_HEADER = (
    "index",
    "true_label",
    "predicted_label",
    "top1_prob",
    "top2_label",
    "top2_prob",
)


@dataclass(frozen=True)
class PredictivePmf:
    """Posterior predictive class probabilities for one input.

    labels lists the class identifiers in probability order: 1..K for a
    softmax head, (0, 1) for the binary head. top2 holds the two largest
    (label, probability) pairs, ties broken toward the lower label.
    """

    labels: tuple[int, ...]
    probabilities: np.ndarray
    sample_count: int
    top2: tuple[tuple[int, float], tuple[int, float]]

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != len(self.labels):
            raise ValueError("probabilities must align with labels")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probabilities", probs)


@dataclass(frozen=True)
class UqReport:
    """Displayable uncertainty summary for one prediction.

    The second entry is shown only when the leading probability falls
    below the threshold.
    """

    top1_label: int
    top1_prob: float
    top2_label: int
    top2_prob: float
    threshold: float

    @property
    def shows_second(self) -> bool:
        return self.top1_prob < self.threshold

    @property
    def displayed(self) -> tuple[tuple[int, float], ...]:
        first = (self.top1_label, self.top1_prob)
        if self.shows_second:
            return (first, (self.top2_label, self.top2_prob))
        return (first,)


def _check_samples(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ConfigError("need a 2-D array with at least one retained sample")
    return samples


def posterior_mean_outputs(
    arch: MlpArchitecture,
    samples: np.ndarray,
    inputs: np.ndarray,
    chunk_rows: int = 4096,
) -> np.ndarray:
    """Mean network output over samples, row per input.

    Work is chunked over input rows; each row's accumulation runs over
    samples in storage order, so any chunking produces identical floats
    (safe to parallelize across row chunks).
    """
    samples = _check_samples(samples)
    inputs = np.asarray(inputs, dtype=np.float64)
    out = np.empty((inputs.shape[0], arch.output_dim))
    for start in range(0, inputs.shape[0], chunk_rows):
        rows = inputs[start : start + chunk_rows]
        acc = np.zeros((rows.shape[0], arch.output_dim))
        for theta in samples:
            acc += forward(arch, theta, rows)
        out[start : start + chunk_rows] = acc / samples.shape[0]
    return out


def _top2(labels: tuple[int, ...], probs: np.ndarray):
    order = np.argsort(-probs, kind="stable")
    a, b = int(order[0]), int(order[1])
    return (
        (labels[a], float(probs[a])),
        (labels[b], float(probs[b])),
    )


def _pmf_from_mean_output(
    arch: MlpArchitecture, mean_out: np.ndarray, sample_count: int
) -> PredictivePmf:
    if arch.is_binary:
        labels: tuple[int, ...] = (0, 1)
        p1 = float(mean_out[0])
        probs = np.array([1.0 - p1, p1])
    else:
        labels = tuple(range(1, arch.output_dim + 1))
        probs = mean_out / mean_out.sum()
    return PredictivePmf(labels, probs, sample_count, _top2(labels, probs))


def predictive_pmf(
    arch: MlpArchitecture, samples: np.ndarray, x: np.ndarray
) -> PredictivePmf:
    """Posterior predictive pmf of one input under retained samples."""
    samples = _check_samples(samples)
    mean_out = posterior_mean_outputs(arch, samples, np.asarray(x)[None, :])[0]
    return _pmf_from_mean_output(arch, mean_out, samples.shape[0])


def predict_multiclass(pmf: PredictivePmf) -> int:
    """Most probable label; ties resolve to the lowest label."""
    return pmf.labels[int(np.argmax(pmf.probabilities))]


def predict_binary(
    arch: MlpArchitecture, samples: np.ndarray, x: np.ndarray
) -> int:
    """Threshold the posterior-averaged output probability at 0.5.

    An average of exactly 0.5 maps to label 1 (the >= rule).
    """
    if not arch.is_binary:
        raise ConfigError("predict_binary requires a single sigmoid output")
    samples = _check_samples(samples)
    mean_out = posterior_mean_outputs(arch, samples, np.asarray(x)[None, :])[0, 0]
    return int(mean_out >= 0.5)


def _slice_last(samples: np.ndarray, last_k: int | None) -> np.ndarray:
    samples = _check_samples(samples)
    if last_k is None:
        return samples
    if not 1 <= last_k <= samples.shape[0]:
        raise ConfigError(
            f"last_k {last_k} exceeds the {samples.shape[0]} retained samples"
        )
    return samples[-last_k:]


def predictive_accuracy(
    arch: MlpArchitecture,
    samples: np.ndarray,
    test: LabeledDataset,
    last_k: int | None = None,
    chunk_rows: int = 4096,
) -> float:
    """Fraction of test points whose posterior-averaged prediction is right."""
    test.validate_for(arch)
    if test.size == 0:
        raise ConfigError("empty test set")
    samples = _slice_last(samples, last_k)
    mean_out = posterior_mean_outputs(arch, samples, test.inputs, chunk_rows)
    if arch.is_binary:
        predicted = (mean_out[:, 0] >= 0.5).astype(np.int64)
    else:
        predicted = np.argmax(mean_out, axis=1) + 1
    return float(np.mean(predicted == test.labels))


def uq_report(pmf: PredictivePmf, threshold: float = 0.5) -> UqReport:
    """Top-1 probability, plus the runner-up when top-1 is below threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    (l1, p1), (l2, p2) = pmf.top2
    return UqReport(l1, p1, l2, p2, threshold)


def write_predictions_csv(
    path: str | Path,
    arch: MlpArchitecture,
    samples: np.ndarray,
    test: LabeledDataset,
    last_k: int | None = None,
    chunk_rows: int = 4096,
) -> float:
    """Per-point predictions with top-2 probabilities; returns accuracy."""
    test.validate_for(arch)
    samples = _slice_last(samples, last_k)
    mean_out = posterior_mean_outputs(arch, samples, test.inputs, chunk_rows)
    v = samples.shape[0]
    correct = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for i in range(test.size):
            pmf = _pmf_from_mean_output(arch, mean_out[i], v)
            if arch.is_binary:
                predicted = int(mean_out[i, 0] >= 0.5)
            else:
                predicted = predict_multiclass(pmf)
            (l1, p1), (l2, p2) = pmf.top2
            correct += int(predicted == test.labels[i])
            writer.writerow(
                [i, int(test.labels[i]), predicted, f"{p1:.6f}", l2, f"{p2:.6f}"]
            )
    return correct / test.size
