"""Multi-chain orchestration with optional acceptance-rate floors.

Chains draw their seeds from one base SeedSequence, so chain i's seed
never depends on how many chains run or on worker count. A floor mode
keeps launching waves of fresh-seed chains until enough of them clear
the required overall acceptance rate, recording the rate and runtime of
every discarded attempt.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from nodegibbs.blocking import BlockPartition
from nodegibbs.errors import ConfigError, NumericError
from nodegibbs.mlp import GaussianPrior, LabeledDataset, MlpArchitecture
from nodegibbs.sampler import ChainConfig, ChainTrace, ProposalConfig, run_chain

__all__ = [
    "chain_seeds",
    "overall_acceptance_rate",
    "DiscardedChain",
    "MultiChainResult",
    "run_chains",
    "write_runtime_csv",
]


def chain_seeds(base_seed: int, count: int) -> list[int]:
    """First `count` chain seeds of the stream rooted at base_seed.

    Extending count keeps the existing prefix, so retry attempts get
    fresh seeds without disturbing earlier chains.
    """
    state = np.random.SeedSequence(base_seed).generate_state(count, np.uint64)
    return [int(s) for s in state]


def overall_acceptance_rate(trace: ChainTrace) -> float:
    """Pooled acceptance frequency over every block update in the run."""
    proposed = int(trace.proposed.sum())
    if proposed == 0:
        return float("nan")
    return int(trace.accepted.sum()) / proposed


@dataclass(frozen=True)
class DiscardedChain:
    """Rate and cost of a chain that missed the acceptance floor."""

    seed: int
    overall_rate: float
    runtime_seconds: float


@dataclass(frozen=True)
class MultiChainResult:
    """Retained traces plus the bookkeeping of any discarded attempts."""

    traces: list[ChainTrace]
    discarded: list[DiscardedChain]
    attempts: int

    @property
    def retained_runtime_seconds(self) -> float:
        return float(sum(t.runtime_seconds for t in self.traces))

    @property
    def discarded_runtime_seconds(self) -> float:
        return float(sum(d.runtime_seconds for d in self.discarded))


def _run_seeded(args) -> ChainTrace:
    arch, data, partition, proposals, prior, config, initial_state, seed = args
    return run_chain(
        arch,
        data,
        partition,
        proposals,
        prior,
        replace(config, seed=seed),
        initial_state=initial_state,
    )


def run_chains(
    arch: MlpArchitecture,
    data: LabeledDataset,
    partition: BlockPartition,
    proposals: ProposalConfig,
    prior: GaussianPrior,
    config: ChainConfig,
    n_chains: int,
    base_seed: int = 0,
    floor: float | None = None,
    max_attempts: int | None = None,
    workers: int = 1,
    initial_state: np.ndarray | None = None,
) -> MultiChainResult:
    """Run n_chains independent chains, optionally above a rate floor.

    Without a floor every seed is retained. With one, chains whose
    overall acceptance rate falls below it are discarded and replaced
    by fresh-seed attempts until n_chains survive or max_attempts runs
    out (default 10 * n_chains). Seeds are consumed in waves sized by
    the remaining deficit, so results do not depend on workers.
    """
    if n_chains < 1:
        raise ConfigError("n_chains must be positive")
    if floor is not None and not 0.0 <= floor < 1.0:
        raise ConfigError("floor must lie in [0, 1)")
    if max_attempts is None:
        max_attempts = n_chains if floor is None else 10 * n_chains
    if max_attempts < n_chains:
        raise ConfigError("max_attempts must allow at least n_chains runs")

    retained: list[ChainTrace] = []
    discarded: list[DiscardedChain] = []
    used = 0
    while len(retained) < n_chains:
        wave = min(n_chains - len(retained), max_attempts - used)
        if wave == 0:
            raise NumericError(
                f"acceptance floor {floor} not reached by {n_chains} chains "
                f"within {max_attempts} attempts"
            )
        seeds = chain_seeds(base_seed, used + wave)[used:]
        used += wave
        jobs = [
            (arch, data, partition, proposals, prior, config, initial_state, seed)
            for seed in seeds
        ]
        if workers > 1:
            with ProcessPoolExecutor(
                max_workers=min(workers, wave), mp_context=get_context("spawn")
            ) as pool:
                traces = list(pool.map(_run_seeded, jobs))
        else:
            traces = [_run_seeded(job) for job in jobs]
        for trace in traces:
            rate = overall_acceptance_rate(trace)
            if floor is None or rate >= floor:
                retained.append(trace)
            else:
                discarded.append(
                    DiscardedChain(trace.config.seed, rate, trace.runtime_seconds)
                )
    return MultiChainResult(retained, discarded, used)


def write_runtime_csv(path: str | Path, result: MultiChainResult) -> None:
    """Per-attempt status/rate/runtime table, retained chains first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["status", "seed", "overall_rate", "runtime_seconds"])
        for trace in result.traces:
            writer.writerow(
                [
                    "retained",
                    trace.config.seed,
                    f"{overall_acceptance_rate(trace):.10g}",
                    f"{trace.runtime_seconds:.6f}",
                ]
            )
        for item in result.discarded:
            writer.writerow(
                [
                    "discarded",
                    item.seed,
                    f"{item.overall_rate:.10g}",
                    f"{item.runtime_seconds:.6f}",
                ]
            )
