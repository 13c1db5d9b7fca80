"""Proper random samplings over subsets of {0..n-1} and set partitions.

Indices are 0-based throughout the API; the plain-text partition format
used in configs and CSV output is 1-based ("1,4,7,10|2,5,8,11|3,6,9,12").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

PROB_TOL = 1e-12


class SamplingError(ValueError):
    """Invalid sampling construction (improper probabilities, bad indices)."""


@dataclass(frozen=True)
class Partition:
    """Disjoint blocks covering {0..n-1}, stored in canonical order."""

    blocks: tuple[tuple[int, ...], ...]
    n: int

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        blocks = tuple(sorted(blocks, key=lambda b: b[0]))
        object.__setattr__(self, "blocks", blocks)
        seen = [i for b in blocks for i in b]
        if sorted(seen) != list(range(self.n)):
            raise SamplingError(f"blocks must partition 0..{self.n - 1}, got {blocks}")

    @property
    def m(self) -> int:
        return len(self.blocks)

    def block_of(self, i: int) -> int:
        for j, b in enumerate(self.blocks):
            if i in b:
                return j
        raise SamplingError(f"index {i} out of range for n={self.n}")

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def to_text(self) -> str:
        return "|".join(",".join(str(i + 1) for i in b) for b in self.blocks)

    @classmethod
    def from_text(cls, text: str, n: int | None = None) -> "Partition":
        blocks = tuple(tuple(int(tok) - 1 for tok in part.split(",")) for part in text.split("|"))
        if n is None:
            n = sum(len(b) for b in blocks)
        return cls(blocks, n)


def count_partitions(n: int, b: int) -> int:
    """Number of partitions of an n-set into blocks of equal size b.

    Exact integer value of ``prod_{j=1..n/b} C(j*b - 1, b - 1)``.
    """
    if n < 1 or b < 1 or n % b != 0:
        raise SamplingError(f"block size {b} must divide n={n}")
    total = 1
    for j in range(1, n // b + 1):
        total *= math.comb(j * b - 1, b - 1)
    return total


def enumerate_partitions(n: int, b: int):
    """Yield every equal-size-b partition exactly once, canonically ordered.

    The smallest unassigned index anchors each new block and its b-1
    companions run in lexicographic order, so the stream is deterministic
    and free of duplicates.
    """
    if n < 1 or b < 1 or n % b != 0:
        raise SamplingError(f"block size {b} must divide n={n}")

    def rec(remaining, acc):
        if not remaining:
            yield Partition(tuple(acc), n)
            return
        anchor = remaining[0]
        rest = remaining[1:]
        for companions in combinations(rest, b - 1):
            block = (anchor,) + companions
            left = [i for i in rest if i not in companions]
            yield from rec(left, acc + [block])

    yield from rec(list(range(n)), [])


def consecutive_partition(n: int, b: int) -> Partition:
    """Blocks of adjacent indices: {0..b-1}, {b..2b-1}, ..."""
    if n % b != 0:
        raise SamplingError(f"block size {b} must divide n={n}")
    return Partition(tuple(tuple(range(j * b, (j + 1) * b)) for j in range(n // b)), n)


def equidistant_partition(n: int, b: int) -> Partition:
    """Blocks of indices spaced by stride n/b: {j, j+m, j+2m, ...}."""
    if n % b != 0:
        raise SamplingError(f"block size {b} must divide n={n}")
    m = n // b
    return Partition(tuple(tuple(range(j, n, m)) for j in range(m)), n)


class SamplingScheme:
    """Distribution over subsets of {0..n-1} with known inclusion probabilities.

    Subclasses expose exact single and pairwise inclusion probabilities,
    a seeded ``draw``, and (when the support is small) the full atom list
    of the subset distribution.
    """

    n: int
    variant: str

    def draw(self, rng: np.random.Generator) -> tuple[int, ...]:
        raise NotImplementedError

    def inclusion_prob(self, i: int) -> float:
        raise NotImplementedError

    def pair_prob(self, i: int, j: int) -> float:
        raise NotImplementedError

    def atoms(self, budget: int = 10000) -> list[tuple[tuple[int, ...], float]]:
        """All (subset, probability) pairs of the distribution."""
        raise NotImplementedError

    def iterations_per_epoch(self) -> int:
        """Iterations doing one full-sampling iteration's worth of work."""
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def probabilities(self) -> np.ndarray:
        return np.array([self.inclusion_prob(i) for i in range(self.n)])

    def _check_index(self, i: int):
        if not 0 <= i < self.n:
            raise SamplingError(f"index {i} out of range for n={self.n}")


class SerialSampling(SamplingScheme):
    """One coordinate per iteration, drawn from an explicit probability vector."""

    variant = "serial"

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise SamplingError("serial sampling needs a 1-D probability vector")
        if np.any(probs <= 0):
            raise SamplingError("all inclusion probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise SamplingError(f"probabilities must sum to 1, got {probs.sum()!r}")
        self.n = probs.size
        self.probs = probs
        self._cum = np.cumsum(probs)

    def draw(self, rng):
        j = int(np.searchsorted(self._cum, rng.random(), side="right"))
        return (min(j, self.n - 1),)

    def inclusion_prob(self, i):
        self._check_index(i)
        return float(self.probs[i])

    def pair_prob(self, i, j):
        self._check_index(i)
        self._check_index(j)
        return float(self.probs[i]) if i == j else 0.0

    def atoms(self, budget=10000):
        return [((i,), float(self.probs[i])) for i in range(self.n)]

    def iterations_per_epoch(self):
        return self.n

    def describe(self):
        if np.allclose(self.probs, 1.0 / self.n):
            return f"serial(n={self.n},uniform)"
        return f"serial(n={self.n},weighted)"


def serial_uniform(n: int) -> SerialSampling:
    return SerialSampling(np.full(n, 1.0 / n))


class PartitionSampling(SamplingScheme):
    """One whole block of a fixed partition per iteration.

    With equal block sizes b this is b-serial sampling; unequal blocks
    are accepted as the general partition case.
    """

    variant = "b_serial"

    def __init__(self, partition: Partition, block_probs=None):
        self.partition = partition
        self.n = partition.n
        m = partition.m
        if block_probs is None:
            block_probs = np.full(m, 1.0 / m)
        block_probs = np.asarray(block_probs, dtype=float)
        if block_probs.size != m:
            raise SamplingError("one probability per block required")
        if np.any(block_probs <= 0):
            raise SamplingError("all block probabilities must be strictly positive")
        if abs(block_probs.sum() - 1.0) > PROB_TOL:
            raise SamplingError(f"block probabilities must sum to 1, got {block_probs.sum()!r}")
        self.block_probs = block_probs
        self._cum = np.cumsum(block_probs)
        self._block_of = {}
        for j, blk in enumerate(partition.blocks):
            for i in blk:
                self._block_of[i] = j

    def draw(self, rng):
        j = int(np.searchsorted(self._cum, rng.random(), side="right"))
        return self.partition.blocks[min(j, self.partition.m - 1)]

    def inclusion_prob(self, i):
        self._check_index(i)
        return float(self.block_probs[self._block_of[i]])

    def pair_prob(self, i, j):
        self._check_index(i)
        self._check_index(j)
        bi, bj = self._block_of[i], self._block_of[j]
        return float(self.block_probs[bi]) if bi == bj else 0.0

    def atoms(self, budget=10000):
        return [(blk, float(p)) for blk, p in zip(self.partition.blocks, self.block_probs)]

    def iterations_per_epoch(self):
        return self.partition.m

    def describe(self):
        return f"b_serial(n={self.n},partition={self.partition.to_text()})"


def b_serial_uniform(n: int, b: int, partition: Partition | None = None) -> PartitionSampling:
    """Uniform b-serial sampling; defaults to the consecutive partition."""
    if partition is None:
        partition = consecutive_partition(n, b)
    if set(partition.block_sizes()) != {b}:
        raise SamplingError(f"b-serial sampling needs equal block size {b}, got {partition.block_sizes()}")
    return PartitionSampling(partition)


class BNiceSampling(SamplingScheme):
    """Uniformly random size-b subset per iteration."""

    variant = "b_nice"

    def __init__(self, n: int, b: int):
        if not 1 <= b <= n:
            raise SamplingError(f"need 1 <= b <= n, got b={b}, n={n}")
        self.n = n
        self.b = b

    def draw(self, rng):
        return tuple(sorted(int(i) for i in rng.choice(self.n, size=self.b, replace=False)))

    def inclusion_prob(self, i):
        self._check_index(i)
        return self.b / self.n

    def pair_prob(self, i, j):
        self._check_index(i)
        self._check_index(j)
        if i == j:
            return self.b / self.n
        return self.b * (self.b - 1) / (self.n * (self.n - 1))

    def atoms(self, budget=10000):
        total = math.comb(self.n, self.b)
        if total > budget:
            raise SamplingError(f"b-nice support has {total} atoms, over the budget {budget}")
        p = 1.0 / total
        return [(subset, p) for subset in combinations(range(self.n), self.b)]

    def iterations_per_epoch(self):
        if self.n % self.b != 0:
            raise SamplingError(
                f"epoch accounting needs b | n; b={self.b} does not divide n={self.n}")
        return self.n // self.b

    def describe(self):
        return f"b_nice(n={self.n},b={self.b})"


class FullSampling(SamplingScheme):
    """Every coordinate every iteration (deterministic PDHG sampling)."""

    variant = "full"

    def __init__(self, n: int):
        if n < 1:
            raise SamplingError("need n >= 1")
        self.n = n

    def draw(self, rng):
        return tuple(range(self.n))

    def inclusion_prob(self, i):
        self._check_index(i)
        return 1.0

    def pair_prob(self, i, j):
        self._check_index(i)
        self._check_index(j)
        return 1.0

    def atoms(self, budget=10000):
        return [(tuple(range(self.n)), 1.0)]

    def iterations_per_epoch(self):
        return 1

    def describe(self):
        return f"full(n={self.n})"
