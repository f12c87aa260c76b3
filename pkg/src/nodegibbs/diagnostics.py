"""Chain diagnostics: acceptance rates, traceplots, batch volatility.

Acceptance aggregation pools raw proposed/accepted counters before
dividing, so a node or layer rate is one frequency over all its blocks'
updates rather than an average of per-block rates. The volatility study
measures how the per-point data log-likelihood at a fixed parameter
vector scatters across random minibatches of each size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nodegibbs.blocking import BlockPartition, partition_summary_rows
from nodegibbs.errors import ConfigError, DataFormatError
from nodegibbs.mlp import (
    LabeledDataset,
    MlpArchitecture,
    ParameterLayout,
    dataset_nll,
)
from nodegibbs.sampler import ChainTrace

__all__ = [
    "RATE_LEVELS",
    "AcceptanceRate",
    "acceptance_rates",
    "RateSummary",
    "multi_chain_summary",
    "TraceplotSeries",
    "extract_traceplot",
    "VolatilityStudy",
    "loglik_volatility",
    "write_acceptance_csv",
    "write_partition_csv",
    "write_rate_summary_csv",
    "write_traceplot_csv",
    "write_volatility_csv",
    "write_volatility_summary_csv",
]

RATE_LEVELS = ("block", "node", "layer")


@dataclass(frozen=True)
class AcceptanceRate:
    """Pooled acceptance frequency for one block, node, or layer.

    block is the 0-based partition position at block level and -1 at
    coarser levels; node is -1 at layer level.
    """

    layer: int
    node: int
    block: int
    proposed: int
    accepted: int

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed


def _group_key(level: str, layer: int, node: int, block: int) -> tuple[int, int, int]:
    if level == "block":
        return (layer, node, block)
    if level == "node":
        return (layer, node, -1)
    return (layer, -1, -1)


def acceptance_rates(trace: ChainTrace, level: str = "layer") -> list[AcceptanceRate]:
    """Acceptance frequencies pooled to the requested granularity."""
    if level not in RATE_LEVELS:
        raise ConfigError(f"level must be one of {RATE_LEVELS}, got {level!r}")
    if int(trace.proposed.sum()) == 0:
        raise DataFormatError("trace has no post-burnin proposals to aggregate")
    pooled: dict[tuple[int, int, int], list[int]] = {}
    for q, block in enumerate(trace.partition.blocks):
        key = _group_key(level, block.layer, block.node, q)
        counts = pooled.setdefault(key, [0, 0])
        counts[0] += int(trace.proposed[q])
        counts[1] += int(trace.accepted[q])
    return [
        AcceptanceRate(layer, node, block, proposed, accepted)
        for (layer, node, block), (proposed, accepted) in sorted(pooled.items())
    ]


@dataclass(frozen=True)
class RateSummary:
    """Across-chain statistics of one unit's acceptance rate."""

    layer: int
    node: int
    block: int
    chains: int
    mean: float
    median: float
    q1: float
    q3: float


def _partition_fingerprint(partition: BlockPartition) -> tuple:
    return (
        partition.scheme.value,
        tuple(
            (b.layer, b.node, b.sub_block, tuple(b.indices.tolist()))
            for b in partition.blocks
        ),
    )


def multi_chain_summary(
    traces: list[ChainTrace], level: str = "layer"
) -> list[RateSummary]:
    """Mean/median/quartiles of per-unit rates across chains."""
    if not traces:
        raise ConfigError("need at least one trace")
    reference = _partition_fingerprint(traces[0].partition)
    for trace in traces[1:]:
        if _partition_fingerprint(trace.partition) != reference:
            raise ConfigError("traces use different partitions")
    per_chain = [acceptance_rates(trace, level) for trace in traces]
    out = []
    for unit, rows in zip(per_chain[0], zip(*per_chain)):
        rates = np.array([row.rate for row in rows])
        q1, median, q3 = np.percentile(rates, [25.0, 50.0, 75.0])
        out.append(
            RateSummary(
                unit.layer,
                unit.node,
                unit.block,
                len(traces),
                float(rates.mean()),
                float(median),
                float(q1),
                float(q3),
            )
        )
    return out


@dataclass(frozen=True)
class TraceplotSeries:
    """Thinned retained-sample series of one flat parameter coordinate."""

    flat_index: int
    layer: int
    node: int
    is_bias: bool
    iterations: np.ndarray
    values: np.ndarray


def extract_traceplot(
    trace: ChainTrace, flat_index: int, thin: int = 1
) -> TraceplotSeries:
    """Every thin-th retained value of one coordinate, with its tag."""
    if thin < 1:
        raise ConfigError("thin must be a positive integer")
    layout = ParameterLayout(trace.arch)
    if not 0 <= flat_index < layout.size:
        raise ConfigError(
            f"flat_index {flat_index} out of range for {layout.size} parameters"
        )
    if trace.samples.shape[0] == 0:
        raise DataFormatError("trace retained no samples")
    rows = np.arange(0, trace.samples.shape[0], thin)
    tag = layout.describe(flat_index)
    return TraceplotSeries(
        flat_index,
        tag.layer,
        tag.node,
        tag.is_bias,
        trace.first_retained_iteration + rows,
        trace.samples[rows, flat_index].copy(),
    )


@dataclass(frozen=True)
class VolatilityStudy:
    """Normalized log-likelihood scatter across minibatch sizes.

    samples[i, j] is the per-point log-likelihood of draw j at
    batch_sizes[i]; full_reference is the same quantity on the whole
    dataset. theta_note records where the evaluation point came from.
    """

    batch_sizes: tuple[int, ...]
    samples: np.ndarray
    full_reference: float
    theta_note: str

    @property
    def means(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.samples, axis=1)

    @property
    def stds(self) -> np.ndarray:
        # The float mean of n identical values can round away from
        # them; rows with zero spread have zero std by definition.
        out = self.samples.std(axis=1)
        out[np.ptp(self.samples, axis=1) == 0.0] = 0.0
        return out


def loglik_volatility(
    arch: MlpArchitecture,
    theta: np.ndarray,
    data: LabeledDataset,
    batch_sizes: list[int],
    draws_per_size: int = 10,
    seed: int = 0,
    theta_note: str = "user-supplied",
) -> VolatilityStudy:
    """Per-point log-likelihood of random batches at a fixed parameter.

    Each draw picks a batch without replacement, evaluates the loss,
    divides by the batch size, and negates, so values are comparable
    across sizes; the full batch reproduces one deterministic value.
    """
    if draws_per_size < 1:
        raise ConfigError("draws_per_size must be positive")
    for size in batch_sizes:
        if not 1 <= size <= data.size:
            raise ConfigError(
                f"batch size {size} outside [1, {data.size}]"
            )
    rng = np.random.default_rng(seed)
    samples = np.empty((len(batch_sizes), draws_per_size))
    for i, size in enumerate(batch_sizes):
        for j in range(draws_per_size):
            # The full batch skips subsetting so every draw reduces the
            # rows in the same order and reproduces one exact value.
            if size == data.size:
                batch = data
            else:
                batch = data.subset(rng.choice(data.size, size=size, replace=False))
            samples[i, j] = -dataset_nll(arch, theta, batch) / size
    full = -dataset_nll(arch, theta, data) / data.size
    return VolatilityStudy(tuple(batch_sizes), samples, float(full), theta_note)


def _write_rows(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_acceptance_csv(
    path: str | Path, rows: list[AcceptanceRate], level: str
) -> None:
    _write_rows(
        path,
        ["level", "layer", "node", "block", "proposed", "accepted", "rate"],
        (
            [level, r.layer, r.node, r.block, r.proposed, r.accepted, f"{r.rate:.10g}"]
            for r in rows
        ),
    )


def write_rate_summary_csv(
    path: str | Path, rows: list[RateSummary], level: str
) -> None:
    _write_rows(
        path,
        ["level", "layer", "node", "block", "chains", "mean", "median", "q1", "q3"],
        (
            [
                level,
                r.layer,
                r.node,
                r.block,
                r.chains,
                f"{r.mean:.10g}",
                f"{r.median:.10g}",
                f"{r.q1:.10g}",
                f"{r.q3:.10g}",
            ]
            for r in rows
        ),
    )


def write_traceplot_csv(path: str | Path, series_list: list[TraceplotSeries]) -> None:
    def rows():
        for s in series_list:
            for iteration, value in zip(s.iterations, s.values):
                yield [
                    s.flat_index,
                    s.layer,
                    s.node,
                    int(s.is_bias),
                    int(iteration),
                    f"{value:.17g}",
                ]

    _write_rows(
        path,
        ["flat_index", "layer", "node", "is_bias", "iteration", "value"],
        rows(),
    )


def write_volatility_csv(path: str | Path, study: VolatilityStudy) -> None:
    def rows():
        for i, size in enumerate(study.batch_sizes):
            for j in range(study.samples.shape[1]):
                yield [size, j, f"{study.samples[i, j]:.17g}"]

    _write_rows(path, ["batch_size", "draw", "normalized_loglik"], rows())


def write_partition_csv(path: str | Path, partition: BlockPartition) -> None:
    _write_rows(
        path,
        ["block", "layer", "node", "sub_block", "size"],
        partition_summary_rows(partition),
    )


def write_volatility_summary_csv(path: str | Path, study: VolatilityStudy) -> None:
    _write_rows(
        path,
        ["batch_size", "draws", "mean", "median", "std", "full_reference", "theta"],
        (
            [
                size,
                study.samples.shape[1],
                f"{study.means[i]:.17g}",
                f"{study.medians[i]:.17g}",
                f"{study.stds[i]:.17g}",
                f"{study.full_reference:.17g}",
                study.theta_note,
            ]
            for i, size in enumerate(study.batch_sizes)
        ),
    )
