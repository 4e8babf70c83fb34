"""Subsets and set partitions of the component index set.

Components are 0-based internally. ``labels()`` and the JSON helpers use the
1-based numbering found in configs and reports.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionCapError, InvalidParameterError
from .settings import get_settings


@dataclass(frozen=True)
class ComponentSet:
    """Ordered subset B of {0..m-1}."""

    members: Tuple[int, ...]
    m: int
    allow_empty: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(j) for j in self.members))
        if self.m < 1:
            raise InvalidParameterError(f"Ambient dimension must be positive, got {self.m}")
        if not self.members and not self.allow_empty:
            raise InvalidParameterError("ComponentSet must be nonempty")
        if any(b <= a for a, b in zip(self.members, self.members[1:])):
            raise InvalidParameterError(f"Members must be strictly increasing: {self.members}")
        if self.members and (self.members[0] < 0 or self.members[-1] >= self.m):
            raise InvalidParameterError(f"Members {self.members} outside 0..{self.m - 1}")

    @classmethod
    def from_mask(cls, mask: int, m: int) -> "ComponentSet":
        return cls(tuple(j for j in range(m) if mask >> j & 1), m, allow_empty=mask == 0)

    @classmethod
    def full(cls, m: int) -> "ComponentSet":
        return cls(tuple(range(m)), m)

    @classmethod
    def from_labels(cls, labels: Iterable[int], m: int) -> "ComponentSet":
        """Build from 1-based component labels."""
        return cls(tuple(sorted(int(j) - 1 for j in labels)), m)

    @property
    def mask(self) -> int:
        out = 0
        for j in self.members:
            out |= 1 << j
        return out

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.members, dtype=int)

    def complement(self) -> "ComponentSet":
        return ComponentSet.from_mask(((1 << self.m) - 1) & ~self.mask, self.m)

    def is_full(self) -> bool:
        return len(self.members) == self.m

    def labels(self) -> List[int]:
        return [j + 1 for j in self.members]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __str__(self) -> str:
        return "{" + ",".join(str(j) for j in self.labels()) + "}"


@dataclass(frozen=True)
class Partition:
    """Partition of {0..m-1} with blocks sorted by their smallest member."""

    blocks: Tuple[ComponentSet, ...]
    m: int

    def __post_init__(self):
        blocks = tuple(sorted(self.blocks, key=lambda b: b.members[0] if b.members else -1))
        object.__setattr__(self, "blocks", blocks)
        seen = 0
        for b in blocks:
            if not b.members:
                raise InvalidParameterError("Partition blocks must be nonempty")
            if b.m != self.m:
                raise InvalidParameterError(f"Block {b} has dimension {b.m}, expected {self.m}")
            if seen & b.mask:
                raise InvalidParameterError(f"Block {b} overlaps an earlier block")
            seen |= b.mask
        if seen != (1 << self.m) - 1:
            raise InvalidParameterError(f"Blocks do not cover all {self.m} components")

    @classmethod
    def from_masks(cls, masks: Sequence[int], m: int) -> "Partition":
        return cls(tuple(ComponentSet.from_mask(mk, m) for mk in masks), m)

    @classmethod
    def from_assignment(cls, assignment: Sequence[int]) -> "Partition":
        """Group component j with every component sharing assignment[j]."""
        m = len(assignment)
        groups = {}
        for j, label in enumerate(assignment):
            groups.setdefault(label, []).append(j)
        return cls(tuple(ComponentSet(tuple(g), m) for g in groups.values()), m)

    @classmethod
    def from_label_lists(cls, lists: Sequence[Sequence[int]], m: int) -> "Partition":
        """Build from 1-based block lists such as [[1, 2], [3]]."""
        return cls(tuple(ComponentSet.from_labels(b, m) for b in lists), m)

    @classmethod
    def singletons(cls, m: int) -> "Partition":
        return cls(tuple(ComponentSet((j,), m) for j in range(m)), m)

    @classmethod
    def single_block(cls, m: int) -> "Partition":
        return cls((ComponentSet.full(m),), m)

    @property
    def masks(self) -> Tuple[int, ...]:
        return tuple(b.mask for b in self.blocks)

    def max_block_size(self) -> int:
        return max(len(b) for b in self.blocks)

    def to_label_lists(self) -> List[List[int]]:
        return [b.labels() for b in self.blocks]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[ComponentSet]:
        return iter(self.blocks)

    def __str__(self) -> str:
        return "{" + ",".join(str(b) for b in self.blocks) + "}"


def _check_cap(m: int, cap: int, what: str) -> None:
    if m < 1:
        raise InvalidParameterError(f"Dimension must be at least 1, got {m}")
    if m > cap:
        raise DimensionCapError(
            f"Refusing to enumerate {what} for m={m}: cap is {cap} "
            f"(combinatorial explosion, Bell/2^m growth)"
        )


def restricted_growth_strings(m: int) -> Iterator[Tuple[int, ...]]:
    """Yield restricted growth strings of length m in lexicographic order."""
    a = [0] * m
    # prefix_max[i] = max(a[0..i-1]), prefix_max[0] unused
    prefix_max = [0] * m
    yield tuple(a)
    while True:
        i = m - 1
        while i >= 1 and a[i] > prefix_max[i]:
            i -= 1
        if i < 1:
            return
        a[i] += 1
        top = max(prefix_max[i], a[i])
        for j in range(i + 1, m):
            a[j] = 0
            prefix_max[j] = top
        yield tuple(a)


def partition_masks(m: int, cap: Optional[int] = None) -> Iterator[Tuple[int, ...]]:
    """Stream partitions of {0..m-1} as tuples of block bitmasks."""
    _check_cap(m, cap if cap is not None else get_settings().caps.partitions, "partitions")
    for rgs in restricted_growth_strings(m):
        masks = [0] * (max(rgs) + 1)
        for j, label in enumerate(rgs):
            masks[label] |= 1 << j
        yield tuple(masks)


def enumerate_partitions(m: int, cap: Optional[int] = None) -> Iterator[Partition]:
    """Lazily yield every partition of {0..m-1} exactly once, canonical order."""
    for masks in partition_masks(m, cap):
        yield Partition.from_masks(masks, m)


def bell_number(m: int) -> int:
    """Exact Bell number via the Bell triangle (arbitrary-precision ints)."""
    if m < 0:
        raise InvalidParameterError(f"bell_number needs m >= 0, got {m}")
    row = [1]
    for _ in range(m):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


def enumerate_nonempty_subsets(m: int, cap: Optional[int] = None) -> Iterator[ComponentSet]:
    """Lazily yield the 2^m - 1 nonempty subsets in bitmask order."""
    _check_cap(m, cap if cap is not None else get_settings().caps.subsets, "subsets")
    for mask in range(1, 1 << m):
        yield ComponentSet.from_mask(mask, m)


def pairs(m: int) -> Iterator[ComponentSet]:
    for i, j in combinations(range(m), 2):
        yield ComponentSet((i, j), m)


def submasks(mask: int) -> Iterator[int]:
    """All submasks of ``mask`` including 0 and ``mask`` itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask
