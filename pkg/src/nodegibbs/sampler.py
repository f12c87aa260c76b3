"""Minibatch Metropolis-within-blocked-Gibbs sampling of MLP posteriors.

One iteration sweeps the blocks of a partition in order. Each block gets
an isotropic normal random-walk proposal, accepted with probability

    min{ exp( log pi(cand_block) - log pi(cur_block) + E(cur) - E(cand) ), 1 }

where E is the unnormalized classification loss on the iteration's data
view (a fresh uniform minibatch, or the full dataset). Blocks updated
earlier in a sweep are visible to later blocks of the same sweep.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from nodegibbs.blocking import (
    BlockingScheme,
    BlockPartition,
    FinerNodeSpec,
    make_partition,
)
from nodegibbs.errors import ConfigError, StorageError
from nodegibbs.mlp import (
    ActivationKind,
    GaussianPrior,
    LabeledDataset,
    MlpArchitecture,
    apply_activation,
    activations_from_layer,
    dataset_nll,
    log_likelihood,
    output_nll,
    param_count,
    unpack_parameters,
)

__all__ = [
    "ProposalConfig",
    "ChainConfig",
    "ChainTrace",
    "MinibatchSource",
    "SweepRecord",
    "acceptance_probability_likelihood",
    "acceptance_probability_crossentropy",
    "blocked_gibbs_sweep",
    "read_trace_metadata",
    "run_chain",
]

TRACE_FORMAT = "nodegibbs-trace-v1"
SAMPLES_FILE = "samples.bin"
META_FILE = "meta.json"


@dataclass(frozen=True)
class ProposalConfig:
    """Per-block proposal variances.

    A block's variance is looked up in order: block_variances by sweep
    position, then layer_variances by the block's layer tag, then
    default_variance. Every block must resolve to a positive value.
    """

    default_variance: float | None = None
    layer_variances: dict[int, float] = field(default_factory=dict)
    block_variances: dict[int, float] = field(default_factory=dict)

    @classmethod
    def uniform(cls, variance: float) -> "ProposalConfig":
        return cls(default_variance=float(variance))

    @classmethod
    def per_layer(cls, variances: dict[int, float]) -> "ProposalConfig":
        return cls(layer_variances=dict(variances))

    def resolve(self, partition: BlockPartition) -> np.ndarray:
        """Variance per block, in sweep order."""
        for layer in self.layer_variances:
            if not 1 <= layer <= partition.arch.depth:
                raise ConfigError(f"proposal variance for unknown layer {layer}")
        out = np.empty(partition.block_count)
        for q, block in enumerate(partition.blocks):
            if q in self.block_variances:
                v = self.block_variances[q]
            elif block.layer in self.layer_variances:
                v = self.layer_variances[block.layer]
            elif self.default_variance is not None:
                v = self.default_variance
            else:
                raise ConfigError(
                    f"no proposal variance for block {q} (layer {block.layer})"
                )
            if not v > 0:
                raise ConfigError(f"proposal variance for block {q} must be > 0")
            out[q] = v
        return out


@dataclass(frozen=True)
class ChainConfig:
    """Run-length, minibatching, seeding, and retention settings.

    batch_size None means the full dataset (exact sampling). burnin may
    equal total_iterations, which retains nothing and counts nothing.
    retain_last bounds how many of the final iterations are stored for
    marginalization; it cannot exceed the post-burnin count.
    batch_per_block draws a fresh minibatch before every block update
    instead of once per sweep. record_batch_loglik stores the data-view
    log-likelihood of the current state after every sweep.
    """

    total_iterations: int
    burnin: int
    batch_size: int | None
    seed: int
    retain_last: int
    batch_per_block: bool = False
    record_batch_loglik: bool = False

    def __post_init__(self) -> None:
        for name in ("total_iterations", "burnin", "seed", "retain_last"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.batch_size is not None:
            object.__setattr__(self, "batch_size", int(self.batch_size))
        for name in ("batch_per_block", "record_batch_loglik"):
            object.__setattr__(self, name, bool(getattr(self, name)))
        if self.total_iterations <= 0:
            raise ConfigError("total_iterations must be positive")
        if not 0 <= self.burnin <= self.total_iterations:
            raise ConfigError("burnin must lie in [0, total_iterations]")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 or None for full data")
        if not 0 <= self.retain_last <= self.total_iterations - self.burnin:
            raise ConfigError("retain_last must fit in the post-burnin window")

    @property
    def post_burnin(self) -> int:
        return self.total_iterations - self.burnin


@dataclass
class MinibatchSource:
    """Uniform without-replacement batches of a dataset.

    batch_size None returns the dataset itself (the exact-sampling
    data view); otherwise each draw picks batch_size distinct indices.
    """

    data: LabeledDataset
    batch_size: int | None
    rng: np.random.Generator

    def __post_init__(self) -> None:
        if self.batch_size is not None and not 1 <= self.batch_size <= self.data.size:
            raise ConfigError(
                f"batch_size {self.batch_size} outside 1..{self.data.size}"
            )

    @property
    def is_full(self) -> bool:
        return self.batch_size is None or self.batch_size == self.data.size

    def draw(self) -> LabeledDataset:
        if self.batch_size is None:
            return self.data
        idx = self.rng.choice(self.data.size, size=self.batch_size, replace=False)
        return self.data.subset(idx)


@dataclass(frozen=True)
class SweepRecord:
    """Per-block outcome of one sweep."""

    accepted: np.ndarray
    acceptance_probability: np.ndarray
    candidate_nonfinite: np.ndarray


def _log_accept(
    current_loss: float, candidate_loss: float, prior_log_ratio: float
) -> float:
    """Log acceptance probability with the non-finite policy applied.

    A non-finite candidate loss rejects outright; a non-finite current
    loss with a finite candidate accepts outright (escape hatch from a
    numerically broken state).
    """
    if not np.isfinite(candidate_loss):
        return -np.inf
    if not np.isfinite(current_loss):
        return 0.0
    return min(0.0, prior_log_ratio + current_loss - candidate_loss)


def acceptance_probability_likelihood(
    arch: MlpArchitecture,
    prior: GaussianPrior,
    theta_current: np.ndarray,
    theta_candidate: np.ndarray,
    block_indices: np.ndarray,
    data: LabeledDataset,
) -> float:
    """Acceptance probability from the likelihood-ratio form.

    Evaluates min{ [L(cand) pi_block(cand)] / [L(cur) pi_block(cur)], 1 }
    in log space, with the likelihood computed through the direct
    product form. Verification route; the sampler runs on the
    cross-entropy form.
    """
    ll_cur = log_likelihood(arch, theta_current, data)
    ll_cand = log_likelihood(arch, theta_candidate, data)
    prior_lr = prior.log_ratio(
        theta_candidate[block_indices], theta_current[block_indices]
    )
    if not np.isfinite(ll_cand):
        return 0.0
    if not np.isfinite(ll_cur):
        return 1.0
    return float(np.exp(min(0.0, prior_lr + ll_cand - ll_cur)))


def acceptance_probability_crossentropy(
    arch: MlpArchitecture,
    prior: GaussianPrior,
    theta_current: np.ndarray,
    theta_candidate: np.ndarray,
    block_indices: np.ndarray,
    data: LabeledDataset,
) -> float:
    """Acceptance probability from the loss-difference form.

    Same quantity as the likelihood form, computed as
    exp(E(cur) - E(cand)) times the block prior ratio, clamped at 1.
    This is the production path.
    """
    e_cur = dataset_nll(arch, theta_current, data)
    e_cand = dataset_nll(arch, theta_candidate, data)
    prior_lr = prior.log_ratio(
        theta_candidate[block_indices], theta_current[block_indices]
    )
    return float(np.exp(_log_accept(e_cur, e_cand, prior_lr)))


class _CachedEvaluator:
    """Loss evaluation with per-layer activation reuse within a sweep.

    Caches post-activations h_1..h_{depth-1} for the current state on
    the current data view. A candidate touching layer j recomputes
    layers j..depth in full from the cached h_{j-1} using the same layer
    arithmetic as a from-scratch evaluation, so results are bit-identical
    to naive recomputation.
    """

    def __init__(self, arch: MlpArchitecture, weights) -> None:
        self.arch = arch
        self.weights = weights
        self.depth = arch.depth
        self.h: list = [None] * arch.depth
        self.valid_upto = -1
        self.labels = None

    def set_batch(self, batch: LabeledDataset) -> None:
        self.h[0] = batch.inputs
        self.labels = batch.labels
        self.valid_upto = 0

    def _ensure(self, upto: int) -> None:
        while self.valid_upto < upto:
            j = self.valid_upto + 1
            wj, bj = self.weights[j - 1]
            g = self.h[j - 1] @ wj.T + bj
            self.h[j] = apply_activation(g, self.arch.hidden_activation)
            self.valid_upto = j

    def current_loss(self) -> float:
        self._ensure(self.depth - 1)
        _, g = activations_from_layer(
            self.arch, self.weights, self.h[self.depth - 1], self.depth
        )
        return output_nll(self.arch, g, self.labels)

    def candidate_loss(self, start_layer: int):
        self._ensure(start_layer - 1)
        hs, g = activations_from_layer(
            self.arch, self.weights, self.h[start_layer - 1], start_layer
        )
        return output_nll(self.arch, g, self.labels), hs

    def commit(self, start_layer: int, hs) -> None:
        self.h[start_layer : start_layer + len(hs)] = hs
        self.valid_upto = self.depth - 1


class _NaiveEvaluator:
    """From-scratch loss evaluation; reference twin of _CachedEvaluator."""

    def __init__(self, arch: MlpArchitecture, weights) -> None:
        self.arch = arch
        self.weights = weights
        self.inputs = None
        self.labels = None

    def set_batch(self, batch: LabeledDataset) -> None:
        self.inputs = batch.inputs
        self.labels = batch.labels

    def current_loss(self) -> float:
        _, g = activations_from_layer(self.arch, self.weights, self.inputs, 1)
        return output_nll(self.arch, g, self.labels)

    def candidate_loss(self, start_layer: int):
        return self.current_loss(), ()

    def commit(self, start_layer: int, hs) -> None:
        pass


def _spawn_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent streams for proposal noise, accept draws, batches."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def blocked_gibbs_sweep(
    arch: MlpArchitecture,
    theta: np.ndarray,
    partition: BlockPartition,
    proposals: ProposalConfig,
    prior: GaussianPrior,
    batch: LabeledDataset,
    rng: np.random.Generator,
) -> tuple[np.ndarray, SweepRecord]:
    """One full sweep over the partition's blocks on a fixed data view.

    Draws, for each block in order, the proposal noise and then one
    uniform variate from rng. Returns the updated state and the
    per-block record; theta itself is not modified.

    Reference entry point: run_chain performs the same per-block logic
    with separate streams per purpose and activation caching.
    """
    theta = np.array(theta, dtype=np.float64, copy=True)
    sigmas = np.sqrt(proposals.resolve(partition))
    weights = unpack_parameters(arch, theta)
    evaluator = _CachedEvaluator(arch, weights)
    evaluator.set_batch(batch)
    e_cur = evaluator.current_loss()

    m = partition.block_count
    accepted = np.zeros(m, dtype=bool)
    accept_prob = np.zeros(m)
    nonfinite = np.zeros(m, dtype=bool)
    # overflow to inf in a candidate loss is a counted, handled event
    with np.errstate(over="ignore", invalid="ignore"):
        for q, block in enumerate(partition.blocks):
            key = block.as_slice if block.as_slice is not None else block.indices
            old = np.array(theta[key], copy=True)
            cand = old + sigmas[q] * rng.standard_normal(block.size)
            theta[key] = cand
            e_cand, hs = evaluator.candidate_loss(block.layer)
            log_a = _log_accept(e_cur, e_cand, prior.log_ratio(cand, old))
            a = float(np.exp(log_a))
            u = rng.uniform()
            nonfinite[q] = not np.isfinite(e_cand)
            accept_prob[q] = a
            if np.isfinite(e_cand) and u <= a:
                accepted[q] = True
                evaluator.commit(block.layer, hs)
                e_cur = e_cand
            else:
                theta[key] = old
    return theta, SweepRecord(accepted, accept_prob, nonfinite)


@dataclass
class ChainTrace:
    """Retained samples, per-block counters, and the run's provenance.

    samples holds the final retain_last states, one row per iteration,
    oldest first. proposed/accepted count post-burnin block updates;
    candidate_nonfinite counts non-finite candidate losses over the
    whole run. batch_loglik, when recorded, is the per-iteration
    data-view log-likelihood of the post-sweep state, all iterations.
    """

    arch: MlpArchitecture
    partition: BlockPartition
    prior_variance: float
    proposal_variances: np.ndarray
    config: ChainConfig
    samples: np.ndarray
    proposed: np.ndarray
    accepted: np.ndarray
    candidate_nonfinite: np.ndarray
    batch_loglik: np.ndarray | None
    runtime_seconds: float

    @property
    def first_retained_iteration(self) -> int:
        """1-based iteration number of samples' first row."""
        return self.config.total_iterations - self.samples.shape[0] + 1

    def acceptance_rates(self) -> np.ndarray:
        """Per-block acceptance frequency over post-burnin iterations."""
        with np.errstate(invalid="ignore"):
            return np.where(
                self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan
            )

    def save(self, directory: str | Path, extra: dict | None = None) -> Path:
        """Persist to a directory: samples.bin plus meta.json sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.samples.astype("<f8", copy=False).tofile(directory / SAMPLES_FILE)
        spec_beta = {}
        if self.partition.scheme is BlockingScheme.FINER_NODE:
            counts: dict[int, set[int]] = {}
            for b in self.partition.blocks:
                counts.setdefault(b.layer, set()).add(b.sub_block)
            spec_beta = {str(j): max(subs) for j, subs in counts.items()}
        meta = {
            "format": TRACE_FORMAT,
            "architecture": {
                "widths": list(self.arch.widths),
                "hidden_activation": self.arch.hidden_activation.value,
                "output_activation": self.arch.output_activation.value,
            },
            "partition": {
                "scheme": self.partition.scheme.value,
                "beta": spec_beta,
                "block_count": self.partition.block_count,
                "blocks": [
                    [b.layer, b.node, b.sub_block, b.size]
                    for b in self.partition.blocks
                ],
            },
            "prior_variance": self.prior_variance,
            "proposal_variances": [float(v) for v in self.proposal_variances],
            "chain": asdict(self.config),
            "counters": {
                "proposed": [int(v) for v in self.proposed],
                "accepted": [int(v) for v in self.accepted],
                "candidate_nonfinite": [int(v) for v in self.candidate_nonfinite],
            },
            "samples": {
                "file": SAMPLES_FILE,
                "dtype": "<f8",
                "rows": int(self.samples.shape[0]),
                "cols": int(self.samples.shape[1]),
                "first_retained_iteration": self.first_retained_iteration,
            },
            "batch_loglik": None
            if self.batch_loglik is None
            else [float(v) for v in self.batch_loglik],
            "runtime_seconds": self.runtime_seconds,
            "extra": extra or {},
        }
        with open(directory / META_FILE, "w") as fh:
            json.dump(meta, fh, indent=1)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "ChainTrace":
        directory = Path(directory)
        meta_path = directory / META_FILE
        if not meta_path.exists():
            raise StorageError(f"{directory} has no {META_FILE}")
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("format") != TRACE_FORMAT:
            raise StorageError(f"unknown trace format {meta.get('format')!r}")
        arch = MlpArchitecture(
            tuple(meta["architecture"]["widths"]),
            ActivationKind(meta["architecture"]["hidden_activation"]),
            ActivationKind(meta["architecture"]["output_activation"]),
        )
        beta = {int(k): int(v) for k, v in meta["partition"]["beta"].items()}
        partition = make_partition(
            arch, meta["partition"]["scheme"], FinerNodeSpec(beta)
        )
        saved_blocks = [tuple(b) for b in meta["partition"]["blocks"]]
        rebuilt = [(b.layer, b.node, b.sub_block, b.size) for b in partition.blocks]
        if saved_blocks != rebuilt:
            raise StorageError("partition in meta.json does not match its scheme")
        info = meta["samples"]
        raw = np.fromfile(directory / info["file"], dtype="<f8")
        if raw.size != info["rows"] * info["cols"]:
            raise StorageError(
                f"samples file holds {raw.size} values, "
                f"expected {info['rows'] * info['cols']}"
            )
        chain = meta["chain"]
        config = ChainConfig(**chain)
        return cls(
            arch=arch,
            partition=partition,
            prior_variance=float(meta["prior_variance"]),
            proposal_variances=np.asarray(meta["proposal_variances"]),
            config=config,
            samples=raw.reshape(info["rows"], info["cols"]),
            proposed=np.asarray(meta["counters"]["proposed"], dtype=np.int64),
            accepted=np.asarray(meta["counters"]["accepted"], dtype=np.int64),
            candidate_nonfinite=np.asarray(
                meta["counters"]["candidate_nonfinite"], dtype=np.int64
            ),
            batch_loglik=None
            if meta["batch_loglik"] is None
            else np.asarray(meta["batch_loglik"]),
            runtime_seconds=float(meta["runtime_seconds"]),
        )


def read_trace_metadata(directory: str | Path) -> dict:
    """The full meta.json of a stored trace, including its extra dict."""
    meta_path = Path(directory) / META_FILE
    if not meta_path.exists():
        raise StorageError(f"{directory} has no {META_FILE}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format") != TRACE_FORMAT:
        raise StorageError(f"unknown trace format {meta.get('format')!r}")
    return meta


def run_chain(
    arch: MlpArchitecture,
    data: LabeledDataset,
    partition: BlockPartition,
    proposals: ProposalConfig,
    prior: GaussianPrior,
    config: ChainConfig,
    initial_state: np.ndarray | None = None,
    naive_evaluation: bool = False,
) -> ChainTrace:
    """Run one chain: config.total_iterations sweeps over the partition.

    A fresh minibatch is drawn every iteration (or every block update
    with batch_per_block), during burnin too. Counters cover post-burnin
    iterations; the last retain_last states are stored. Three RNG
    streams derived from the seed cover proposal noise, accept draws,
    and batch selection, so retention settings never perturb the
    trajectory. Fully deterministic given the config.

    initial_state defaults to the zero vector. naive_evaluation switches
    the loss path to full recomputation per candidate; the trajectory is
    bit-identical either way (verification hook).
    """
    if partition.arch != arch:
        raise ConfigError("partition was built for a different architecture")
    data.validate_for(arch)
    n = param_count(arch)
    if initial_state is None:
        theta = np.zeros(n)
    else:
        theta = np.array(initial_state, dtype=np.float64, copy=True)
        if theta.shape != (n,):
            raise ConfigError(f"initial_state must have shape ({n},)")

    variances = proposals.resolve(partition)
    sigmas = np.sqrt(variances)
    rng_prop, rng_accept, rng_batch = _spawn_streams(config.seed)
    source = MinibatchSource(data, config.batch_size, rng_batch)

    weights = unpack_parameters(arch, theta)
    evaluator = (
        _NaiveEvaluator(arch, weights)
        if naive_evaluation
        else _CachedEvaluator(arch, weights)
    )

    m = partition.block_count
    blocks = [
        (
            b.as_slice if b.as_slice is not None else b.indices,
            b.size,
            b.layer,
        )
        for b in partition.blocks
    ]
    proposed = np.zeros(m, dtype=np.int64)
    accepted = np.zeros(m, dtype=np.int64)
    nonfinite = np.zeros(m, dtype=np.int64)
    sweep_accepts = np.zeros(m, dtype=np.int64)
    samples = np.empty((config.retain_last, n))
    loglik = np.empty(config.total_iterations) if config.record_batch_loglik else None

    two_v = 2.0 * prior.variance
    started = time.perf_counter()
    first_retained = config.total_iterations - config.retain_last + 1
    # overflow to inf in a candidate loss is a counted, handled event
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.total_iterations + 1):
            if not config.batch_per_block:
                evaluator.set_batch(source.draw())
                e_cur = evaluator.current_loss()
            sweep_accepts[:] = 0
            for q, (key, size, layer) in enumerate(blocks):
                if config.batch_per_block:
                    evaluator.set_batch(source.draw())
                    e_cur = evaluator.current_loss()
                old = np.array(theta[key], copy=True)
                cand = old + sigmas[q] * rng_prop.standard_normal(size)
                theta[key] = cand
                e_cand, hs = evaluator.candidate_loss(layer)
                u = rng_accept.uniform()
                cand_finite = np.isfinite(e_cand)
                if not cand_finite:
                    nonfinite[q] += 1
                    log_a = -np.inf
                elif not np.isfinite(e_cur):
                    log_a = 0.0
                else:
                    prior_lr = -(float(cand @ cand) - float(old @ old)) / two_v
                    log_a = min(0.0, prior_lr + e_cur - e_cand)
                if cand_finite and u <= np.exp(log_a):
                    sweep_accepts[q] = 1
                    evaluator.commit(layer, hs)
                    e_cur = e_cand
                else:
                    theta[key] = old
            if t > config.burnin:
                proposed += 1
                accepted += sweep_accepts
            if loglik is not None:
                loglik[t - 1] = -e_cur
            if t >= first_retained:
                samples[t - first_retained] = theta

    return ChainTrace(
        arch=arch,
        partition=partition,
        prior_variance=prior.variance,
        proposal_variances=variances,
        config=config,
        samples=samples,
        proposed=proposed,
        accepted=accepted,
        candidate_nonfinite=nonfinite,
        batch_loglik=loglik,
        runtime_seconds=time.perf_counter() - started,
    )
