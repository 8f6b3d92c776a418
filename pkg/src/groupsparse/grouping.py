"""Input-variable groups: partitions, the group penalty, and pruning.

A model is "group sparse" in group i when every first-layer weight row
attached to group i's input columns is exactly zero. The penalty that
drives this is, summed over groups,

    penalty = sum_i sqrt(p_i) * ||W_i||_F

where W_i is the block of first-layer weight rows for group i and p_i
is the group's size. Pruning a group zeroes its block and freezes it
for the rest of the run.
"""

from __future__ import annotations

import json
import math
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # only for annotations; avoids a circular import
    from .nn import Network

__all__ = [
    "GroupPartition",
    "SparsityMask",
    "group_regularizer",
    "total_regularizer",
    "regularizer_subgradient",
    "prune_group",
    "load_group_manifest",
    "save_group_manifest",
    "NORM_FLOOR",
]

# Blocks with Frobenius norm at or below this are treated as sitting at the
# origin, where the penalty is not differentiable; the chosen subgradient
# there is the zero block.
NORM_FLOOR = 1e-12


class GroupPartition:
    """A disjoint cover of input columns {0..p-1} by k groups.

    Groups keep their construction order; shuffling during training
    permutes an index list, never the partition, so reports stay stable.
    Instances are immutable and safe to share across threads.
    """

    def __init__(self, groups: Iterable[Sequence[int]], names: Sequence[str] | None = None):
        cols = []
        for g in groups:
            idx = np.asarray(list(g), dtype=np.intp)
            if idx.ndim != 1 or idx.size == 0:
                raise ValueError("every group must be a non-empty 1-D index collection")
            cols.append(idx)
        if not cols:
            raise ValueError("a partition needs at least one group")
        merged = np.concatenate(cols)
        p = int(merged.size)
        seen = np.sort(merged)
        if not np.array_equal(seen, np.arange(p)):
            raise ValueError(
                "group columns must form a partition of 0..p-1 "
                "(disjoint, no gaps, no repeats)"
            )
        self.groups: tuple[np.ndarray, ...] = tuple(cols)
        for g in self.groups:
            g.setflags(write=False)
        self.p = p
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != len(self.groups):
                raise ValueError("names length must match group count")
        self.names: tuple[str, ...] | None = names

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(g.size) for g in self.groups)

    def columns(self, i: int) -> np.ndarray:
        if not 0 <= i < self.k:
            raise IndexError(f"group index {i} out of range for k={self.k}")
        return self.groups[i]

    def name(self, i: int) -> str:
        return self.names[i] if self.names is not None else f"group{i}"

    @classmethod
    def contiguous(cls, sizes: Sequence[int], names: Sequence[str] | None = None) -> "GroupPartition":
        """Consecutive column blocks of the given sizes."""
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        groups = [range(edges[i], edges[i + 1]) for i in range(len(sizes))]
        return cls(groups, names)

    @classmethod
    def singletons(cls, p: int) -> "GroupPartition":
        """One group per column (lasso-style selection)."""
        return cls([[j] for j in range(p)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupPartition):
            return NotImplemented
        return self.p == other.p and len(self.groups) == len(other.groups) and all(
            np.array_equal(a, b) for a, b in zip(self.groups, other.groups)
        )

    def __repr__(self) -> str:
        return f"GroupPartition(k={self.k}, p={self.p}, sizes={self.sizes})"


class SparsityMask:
    """Per-group pruned flags for one training run.

    Flags are monotone: once a group is pruned it never comes back.
    Follows the single-writer rule of the network that owns it.
    """

    def __init__(self, partition: GroupPartition):
        self.partition = partition
        self.flags = np.zeros(partition.k, dtype=bool)

    @property
    def k(self) -> int:
        return self.partition.k

    def live_groups(self) -> list[int]:
        return [i for i in range(self.k) if not self.flags[i]]

    def sparse_groups(self) -> list[int]:
        return [i for i in range(self.k) if self.flags[i]]

    def sparse_count(self) -> int:
        return int(self.flags.sum())

    def sparse_rows(self) -> np.ndarray:
        """All first-layer row indices that belong to pruned groups."""
        pruned = self.sparse_groups()
        if not pruned:
            return np.empty(0, dtype=np.intp)
        return np.concatenate([self.partition.groups[i] for i in pruned])


def _first_layer_block(net: "Network", part: GroupPartition, i: int) -> np.ndarray:
    w = net.layers[0].weights
    if w.shape[0] != part.p:
        raise ValueError(
            f"partition covers {part.p} columns but the network input dimension is {w.shape[0]}"
        )
    return w[part.columns(i), :]


def group_regularizer(net: "Network", part: GroupPartition, i: int) -> float:
    """sqrt(p_i) times the Frobenius norm of group i's first-layer block."""
    block = _first_layer_block(net, part, i)
    return math.sqrt(block.shape[0]) * float(np.linalg.norm(block))


def total_regularizer(net: "Network", part: GroupPartition) -> float:
    """Sum of the per-group penalties; zero iff the whole first layer is zero."""
    return sum(group_regularizer(net, part, i) for i in range(part.k))


def regularizer_subgradient(net: "Network", part: GroupPartition, i: int) -> np.ndarray:
    """Subgradient of the group-i penalty with respect to its weight block.

    Away from the origin this is sqrt(p_i) * W_i / ||W_i||_F. At the origin
    (norm <= NORM_FLOOR) the returned block is zero, which keeps a group at
    the kink unless the data pulls it away.

    Raises RuntimeError when called for an already-pruned group; pruned
    blocks are frozen and have no meaningful descent direction.
    """
    if net.sparse is not None and net.sparse.flags[i]:
        raise RuntimeError(f"group {i} is pruned; its penalty block is frozen")
    block = _first_layer_block(net, part, i)
    nrm = float(np.linalg.norm(block))
    if nrm <= NORM_FLOOR:
        return np.zeros_like(block)
    return (math.sqrt(block.shape[0]) / nrm) * block


def prune_group(net: "Network", mask: SparsityMask, i: int) -> None:
    """Zero group i's first-layer rows exactly and flag it pruned.

    Irreversible for the run; pruning twice is a contract violation.
    """
    if mask.flags[i]:
        raise RuntimeError(f"group {i} is already pruned")
    rows = mask.partition.columns(i)
    net.layers[0].weights[rows, :] = 0.0
    mask.flags[i] = True


def load_group_manifest(path) -> GroupPartition:
    """Read a JSON group manifest: {"groups": [{"name", "columns"}, ...]}.

    Columns are 0-based and must form a partition of the feature width;
    the partition invariant is validated on construction.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "groups" not in doc:
        raise ValueError(f"{path}: manifest must be an object with a 'groups' array")
    entries = doc["groups"]
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: 'groups' must be a non-empty array")
    groups, names = [], []
    for j, entry in enumerate(entries):
        if not isinstance(entry, dict) or "columns" not in entry:
            raise ValueError(f"{path}: groups[{j}] must be an object with a 'columns' array")
        groups.append(entry["columns"])
        names.append(entry.get("name", f"group{j}"))
    return GroupPartition(groups, names)


def save_group_manifest(part: GroupPartition, path) -> None:
    doc = {
        "groups": [
            {"name": part.name(i), "columns": [int(c) for c in part.groups[i]]}
            for i in range(part.k)
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
