"""Experiment configuration files, shipped presets, and overrides.

One YAML file describes a whole experiment in sections that mirror the
library: architecture, partition, prior, proposal, chain, run, data,
output. Presets for the standard scenarios ship inside the package;
`key.path=value` assignments override any field, and a full_chain
section holds the publication-scale iteration counts selectable by
flag.
"""

from __future__ import annotations

import copy
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import yaml

from nodegibbs.blocking import BlockPartition, FinerNodeSpec, make_partition
from nodegibbs.data import (
    PixelStats,
    XorSimConfig,
    load_idx,
    read_xor_csv,
    simulate_noisy_xor,
    standardize,
)
from nodegibbs.errors import ConfigError
from nodegibbs.mlp import (
    ActivationKind,
    GaussianPrior,
    LabeledDataset,
    MlpArchitecture,
)
from nodegibbs.sampler import ChainConfig, ProposalConfig

__all__ = [
    "SECTIONS",
    "builtin_presets",
    "load_preset",
    "load_config_file",
    "apply_overrides",
    "build_architecture",
    "build_partition",
    "build_prior",
    "build_proposals",
    "build_chain_config",
    "RunSettings",
    "build_run_settings",
    "load_experiment_data",
    "ExperimentPlan",
    "build_experiment",
]

SECTIONS = (
    "architecture",
    "partition",
    "prior",
    "proposal",
    "chain",
    "full_chain",
    "run",
    "data",
    "output",
)


def _check_keys(section: dict, allowed: tuple[str, ...], name: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}")


def _get(section: dict, name: str, key: str, kinds, default=None, required=False):
    if key not in section or section[key] is None:
        if required:
            raise ConfigError(f"missing required key {name}.{key}")
        return default
    value = section[key]
    if kinds is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kinds) or isinstance(value, bool) and kinds is not bool:
        raise ConfigError(f"{name}.{key} has wrong type: {value!r}")
    return value


def builtin_presets() -> list[str]:
    """Names of the YAML presets shipped with the package."""
    root = importlib.resources.files("nodegibbs.presets")
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> dict:
    root = importlib.resources.files("nodegibbs.presets")
    resource = root / f"{name}.yaml"
    if not resource.is_file():
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(builtin_presets())}"
        )
    config = yaml.safe_load(resource.read_text())
    _check_keys(config, SECTIONS, "config")
    return config


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = yaml.safe_load(path.read_text())
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    _check_keys(config, SECTIONS, "config")
    return config


def _parse_scalar(text: str):
    return yaml.safe_load(text)


def apply_overrides(config: dict, assignments: list[str]) -> dict:
    """Apply dotted `section.key=value` assignments to a config dict."""
    out = copy.deepcopy(config)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not of form key=value")
        dotted, text = assignment.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        if parts[0] not in SECTIONS:
            raise ConfigError(f"unknown config section {parts[0]!r}")
        node = out.setdefault(parts[0], {})
        for part in parts[1:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a scalar")
        node[parts[-1]] = _parse_scalar(text)
    return out


def build_architecture(section: dict) -> MlpArchitecture:
    _check_keys(section, ("widths", "hidden_activation", "output_activation"), "architecture")
    widths = _get(section, "architecture", "widths", list, required=True)
    if not all(isinstance(w, int) and not isinstance(w, bool) for w in widths):
        raise ConfigError("architecture.widths must be a list of integers")
    kwargs = {}
    for key, field in (
        ("hidden_activation", "hidden_activation"),
        ("output_activation", "output_activation"),
    ):
        name = _get(section, "architecture", key, str)
        if name is not None:
            try:
                kwargs[field] = ActivationKind(name)
            except ValueError:
                raise ConfigError(f"architecture.{key}: unknown activation {name!r}")
    return MlpArchitecture(tuple(widths), **kwargs)


def build_partition(arch: MlpArchitecture, section: dict) -> BlockPartition:
    _check_keys(section, ("scheme", "beta"), "partition")
    scheme = _get(section, "partition", "scheme", str, required=True)
    beta = _get(section, "partition", "beta", dict)
    spec = None
    if beta is not None:
        try:
            spec = FinerNodeSpec({int(k): int(v) for k, v in beta.items()})
        except (TypeError, ValueError):
            raise ConfigError("partition.beta must map layer -> split count")
    try:
        return make_partition(arch, scheme, spec)
    except ValueError as exc:
        raise ConfigError(str(exc))


def build_prior(section: dict) -> GaussianPrior:
    _check_keys(section, ("variance",), "prior")
    variance = _get(section, "prior", "variance", float, default=10.0)
    return GaussianPrior(variance)


def _int_keyed_floats(mapping: dict, name: str) -> dict[int, float]:
    out = {}
    for key, value in mapping.items():
        try:
            out[int(key)] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must map int -> positive float")
    return out


def build_proposals(section: dict) -> ProposalConfig:
    _check_keys(
        section,
        ("default_variance", "layer_variances", "block_variances"),
        "proposal",
    )
    default = _get(section, "proposal", "default_variance", float)
    layers = _get(section, "proposal", "layer_variances", dict, default={})
    blocks = _get(section, "proposal", "block_variances", dict, default={})
    if default is None and not layers and not blocks:
        raise ConfigError("proposal section sets no variances")
    return ProposalConfig(
        default_variance=default,
        layer_variances=_int_keyed_floats(layers, "proposal.layer_variances"),
        block_variances=_int_keyed_floats(blocks, "proposal.block_variances"),
    )


_CHAIN_KEYS = (
    "total_iterations",
    "burnin",
    "batch_size",
    "seed",
    "retain_last",
    "batch_per_block",
    "record_batch_loglik",
)


def build_chain_config(section: dict, full_section: dict | None = None) -> ChainConfig:
    """Chain settings; full_section, when given, overrides field-wise."""
    _check_keys(section, _CHAIN_KEYS, "chain")
    merged = dict(section)
    if full_section is not None:
        _check_keys(full_section, _CHAIN_KEYS, "full_chain")
        merged.update(full_section)
    kwargs = dict(
        total_iterations=_get(merged, "chain", "total_iterations", int, required=True),
        burnin=_get(merged, "chain", "burnin", int, required=True),
        batch_size=_get(merged, "chain", "batch_size", int),
        seed=_get(merged, "chain", "seed", int, default=0),
        retain_last=_get(merged, "chain", "retain_last", int, required=True),
        batch_per_block=_get(merged, "chain", "batch_per_block", bool, default=False),
        record_batch_loglik=_get(
            merged, "chain", "record_batch_loglik", bool, default=False
        ),
    )
    return ChainConfig(**kwargs)


@dataclass(frozen=True)
class RunSettings:
    """How many chains to run and how to retain them."""

    n_chains: int = 1
    base_seed: int = 0
    floor: float | None = None
    max_attempts: int | None = None
    workers: int = 1


def build_run_settings(section: dict) -> RunSettings:
    _check_keys(
        section, ("n_chains", "base_seed", "floor", "max_attempts", "workers"), "run"
    )
    return RunSettings(
        n_chains=_get(section, "run", "n_chains", int, default=1),
        base_seed=_get(section, "run", "base_seed", int, default=0),
        floor=_get(section, "run", "floor", float),
        max_attempts=_get(section, "run", "max_attempts", int),
        workers=_get(section, "run", "workers", int, default=1),
    )


def load_experiment_data(
    section: dict,
) -> tuple[LabeledDataset, LabeledDataset, PixelStats | None]:
    """Load or simulate the (train, test) pair a config describes."""
    kind = _get(section, "data", "kind", str, required=True)
    if kind == "xor":
        _check_keys(
            section, ("kind", "train_size", "test_size", "noise_width", "seed"), "data"
        )
        sim = XorSimConfig(
            train_size=_get(section, "data", "train_size", int, default=5000),
            test_size=_get(section, "data", "test_size", int, default=1200),
            noise_width=_get(section, "data", "noise_width", float, default=0.4),
            seed=_get(section, "data", "seed", int, default=0),
        )
        train, test = simulate_noisy_xor(sim)
        return train, test, None
    if kind == "xor-csv":
        _check_keys(section, ("kind", "train_path", "test_path"), "data")
        train = read_xor_csv(_get(section, "data", "train_path", str, required=True))
        test = read_xor_csv(_get(section, "data", "test_path", str, required=True))
        return train, test, None
    if kind == "idx":
        _check_keys(
            section,
            (
                "kind",
                "train_images",
                "train_labels",
                "test_images",
                "test_labels",
                "standardize",
            ),
            "data",
        )
        paths = {
            key: _get(section, "data", key, str, required=True)
            for key in ("train_images", "train_labels", "test_images", "test_labels")
        }
        train = load_idx(paths["train_images"], paths["train_labels"])
        test = load_idx(paths["test_images"], paths["test_labels"])
        if _get(section, "data", "standardize", bool, default=True):
            train, stats = standardize(train)
            test, _ = standardize(test, stats)
            return train, test, stats
        return train, test, None
    raise ConfigError(f"data.kind must be xor, xor-csv, or idx, got {kind!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    """All built objects of one experiment config, plus the raw echo."""

    arch: MlpArchitecture
    partition: BlockPartition
    prior: GaussianPrior
    proposals: ProposalConfig
    chain: ChainConfig
    run: RunSettings
    output_dir: Path
    raw: dict


def build_experiment(config: dict, full_counts: bool = False) -> ExperimentPlan:
    """Assemble an experiment from a config mapping.

    full_counts switches the chain section to the publication-scale
    full_chain overrides when the config provides them.
    """
    _check_keys(config, SECTIONS, "config")
    for required in ("architecture", "partition", "proposal", "chain"):
        if required not in config:
            raise ConfigError(f"config is missing the {required} section")
    arch = build_architecture(config["architecture"])
    partition = build_partition(arch, config["partition"])
    full_section = None
    if full_counts:
        if "full_chain" not in config:
            raise ConfigError("config has no full_chain section for full counts")
        full_section = config["full_chain"]
    return ExperimentPlan(
        arch=arch,
        partition=partition,
        prior=build_prior(config.get("prior", {})),
        proposals=build_proposals(config["proposal"]),
        chain=build_chain_config(config["chain"], full_section),
        run=build_run_settings(config.get("run", {})),
        output_dir=Path(
            _get(config.get("output", {}), "output", "directory", str, default="runs")
        ),
        raw=config,
    )
