"""Ordered parameter partitions for blocked Gibbs sweeps.

Three schemes over the flat parameter layout: one block per layer, one
block per node (a node's incoming weights plus its bias), and finer
node blocking where each node's slice is split into balanced sub-blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from nodegibbs.mlp import MlpArchitecture, ParameterLayout, param_count

__all__ = [
    "BlockingScheme",
    "Block",
    "BlockPartition",
    "FinerNodeSpec",
    "partition_by_layer",
    "partition_by_node",
    "partition_finer_node",
    "make_partition",
    "validate_partition",
    "partition_summary_rows",
]


class BlockingScheme(Enum):
    LAYER = "layer"
    NODE = "node"
    FINER_NODE = "finer-node"


@dataclass(frozen=True)
class Block:
    """One update unit: flat indices plus its location tags.

    layer and node are 1-based; node and sub_block are 0 for blocks that
    span a whole layer. sub_block numbers a node's pieces from 1.
    """

    indices: np.ndarray
    layer: int
    node: int
    sub_block: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.size == 0:
            raise ValueError("empty block")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size

    @property
    def as_slice(self) -> slice | None:
        """Contiguous-range view of the indices, or None if scattered."""
        first = int(self.indices[0])
        if np.array_equal(
            self.indices, np.arange(first, first + self.indices.size)
        ):
            return slice(first, first + self.indices.size)
        return None


@dataclass(frozen=True)
class FinerNodeSpec:
    """Per-layer split factors; layers absent from the map keep one piece."""

    beta: dict[int, int] = field(default_factory=dict)

    def factor(self, layer: int) -> int:
        return int(self.beta.get(layer, 1))

    def validate_for(self, arch: MlpArchitecture) -> None:
        for layer, b in self.beta.items():
            if not 1 <= layer <= arch.depth:
                raise ValueError(f"layer {layer} out of range 1..{arch.depth}")
            fan_in = arch.widths[layer - 1] + 1
            if not 1 <= b <= fan_in:
                raise ValueError(
                    f"split factor {b} for layer {layer} outside 1..{fan_in}"
                )


@dataclass(frozen=True)
class BlockPartition:
    """Ordered disjoint cover of the flat parameter vector."""

    arch: MlpArchitecture
    scheme: BlockingScheme
    blocks: tuple[Block, ...]

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def sizes(self) -> list[int]:
        return [b.size for b in self.blocks]

    def blocks_in_layer(self, layer: int) -> list[int]:
        """Positions (into blocks) of the blocks tagged with a layer."""
        return [q for q, b in enumerate(self.blocks) if b.layer == layer]


def partition_by_layer(arch: MlpArchitecture) -> BlockPartition:
    """One block per parameterized layer, size k_j * (k_{j-1} + 1)."""
    layout = ParameterLayout(arch)
    blocks = []
    for j in range(1, arch.depth + 1):
        sl = layout.layer_slice(j)
        blocks.append(
            Block(np.arange(sl.start, sl.stop), layer=j, node=0, sub_block=0)
        )
    return BlockPartition(arch, BlockingScheme.LAYER, tuple(blocks))


def partition_by_node(arch: MlpArchitecture) -> BlockPartition:
    """One block per hidden/output node: its weights plus its bias."""
    layout = ParameterLayout(arch)
    blocks = []
    for j in range(1, arch.depth + 1):
        for k in range(1, arch.widths[j] + 1):
            sl = layout.node_slice(j, k)
            blocks.append(
                Block(np.arange(sl.start, sl.stop), layer=j, node=k, sub_block=1)
            )
    return BlockPartition(arch, BlockingScheme.NODE, tuple(blocks))


def partition_finer_node(
    arch: MlpArchitecture, spec: FinerNodeSpec
) -> BlockPartition:
    """Split each node's slice into balanced contiguous sub-blocks.

    A node in layer j yields beta_j pieces whose sizes differ by at most
    one, earlier pieces larger when the fan-in is not divisible. Order is
    layer-major, node-major, sub-block-minor.
    """
    spec.validate_for(arch)
    layout = ParameterLayout(arch)
    blocks = []
    for j in range(1, arch.depth + 1):
        b = spec.factor(j)
        for k in range(1, arch.widths[j] + 1):
            sl = layout.node_slice(j, k)
            pieces = np.array_split(np.arange(sl.start, sl.stop), b)
            for s, piece in enumerate(pieces, start=1):
                blocks.append(Block(piece, layer=j, node=k, sub_block=s))
    return BlockPartition(arch, BlockingScheme.FINER_NODE, tuple(blocks))


def make_partition(
    arch: MlpArchitecture,
    scheme: BlockingScheme | str,
    spec: FinerNodeSpec | None = None,
) -> BlockPartition:
    """Dispatch on scheme name; finer-node uses spec (default: no splits)."""
    scheme = BlockingScheme(scheme) if isinstance(scheme, str) else scheme
    if scheme is BlockingScheme.LAYER:
        return partition_by_layer(arch)
    if scheme is BlockingScheme.NODE:
        return partition_by_node(arch)
    return partition_finer_node(arch, spec or FinerNodeSpec())


def validate_partition(partition: BlockPartition) -> str | None:
    """Check disjointness, coverage, and tag consistency.

    Returns None when the partition is valid, otherwise a short
    description of the first violation found.
    """
    arch = partition.arch
    n = param_count(arch)
    layout = ParameterLayout(arch)
    seen = np.zeros(n, dtype=bool)
    for q, block in enumerate(partition.blocks):
        idx = block.indices
        if idx.min() < 0 or idx.max() >= n:
            return f"overlap: block {q} has indices outside 0..{n - 1}"
        if seen[idx].any():
            return f"overlap: block {q} repeats an already-covered index"
        seen[idx] = True
        tags = [layout.describe(int(i)) for i in idx]
        if any(t.layer != block.layer for t in tags):
            return f"tag: block {q} crosses layers"
        if partition.scheme is not BlockingScheme.LAYER and any(
            t.node != block.node for t in tags
        ):
            return f"tag: block {q} crosses nodes"
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        return f"coverage: index {missing} not covered by any block"
    return None


def partition_summary_rows(partition: BlockPartition) -> list[tuple[int, int, int, int, int]]:
    """Rows (block id, layer, node, sub-block, size) for CSV export."""
    return [
        (q, b.layer, b.node, b.sub_block, b.size)
        for q, b in enumerate(partition.blocks)
    ]
