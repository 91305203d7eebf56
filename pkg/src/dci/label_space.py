"""Candidate label sets and the Divide phase.

All grouping strategies return a :class:`Partition` whose groups are
disjoint, cover the input, hold exactly ``k`` labels except possibly the
last, and number ``ceil(n / k)``.
"""

from __future__ import annotations

import math
import random
import warnings
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass

import numpy as np


class SimilarityMismatch(ValueError):
    """Raised when a similarity matrix does not cover a label set exactly."""


def check_group_size(k: int) -> int:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise TypeError(f"group size must be an integer, got {k!r}")
    if k < 2:
        raise ValueError(f"group size must be >= 2, got {k}")
    return int(k)


@dataclass(frozen=True)
class LabelSet(Sequence[str]):
    """Ordered, duplicate-free candidate labels.

    The constructor trims whitespace and rejects empty or duplicate labels.
    Use :meth:`from_strings` for ingested lists that may contain duplicates.
    """

    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        cleaned = tuple(str(label).strip() for label in self.labels)
        if any(not label for label in cleaned):
            raise ValueError("labels must be non-empty after trimming")
        if len(set(cleaned)) != len(cleaned):
            seen: set[str] = set()
            dupes = sorted({x for x in cleaned if x in seen or seen.add(x)})
            raise ValueError(f"duplicate labels: {dupes}")
        object.__setattr__(self, "labels", cleaned)

    @classmethod
    def from_strings(cls, items: Iterable[str], *, warn: bool = True) -> LabelSet:
        """Trim, drop blanks, and deduplicate (first occurrence wins)."""
        out: list[str] = []
        seen: set[str] = set()
        dropped: list[str] = []
        for item in items:
            label = str(item).strip()
            if not label:
                continue
            if label in seen:
                dropped.append(label)
                continue
            seen.add(label)
            out.append(label)
        if dropped and warn:
            warnings.warn(
                f"dropped {len(dropped)} duplicate label(s): {sorted(set(dropped))}",
                stacklevel=2,
            )
        return cls(tuple(out))

    @classmethod
    def _trusted(cls, labels: tuple[str, ...]) -> LabelSet:
        # caller guarantees labels are a trimmed, duplicate-free subset
        obj = object.__new__(cls)
        object.__setattr__(obj, "labels", labels)
        return obj

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __getitem__(self, index):  # type: ignore[override]
        if isinstance(index, slice):
            return LabelSet(self.labels[index])
        return self.labels[index]

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __repr__(self) -> str:
        if len(self.labels) > 6:
            head = ", ".join(repr(x) for x in self.labels[:5])
            return f"LabelSet([{head}, ... {len(self.labels)} total])"
        return f"LabelSet({list(self.labels)!r})"


@dataclass(frozen=True)
class Partition:
    groups: tuple[LabelSet, ...]
    source_size: int

    def __post_init__(self) -> None:
        sizes = [len(g) for g in self.groups]
        if sum(sizes) != self.source_size:
            raise ValueError("groups do not cover the source set")
        if any(s == 0 for s in sizes):
            raise ValueError("empty group in partition")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def flat(self) -> list[str]:
        return [label for group in self.groups for label in group]


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Dense symmetric similarity scores in [-1, 1] with unit diagonal."""

    labels: LabelSet
    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        n = len(self.labels)
        if scores.shape != (n, n):
            raise SimilarityMismatch(
                f"matrix shape {scores.shape} does not match {n} labels"
            )
        if not np.all(np.isfinite(scores)):
            raise ValueError("similarity scores must be finite")
        if not np.allclose(scores, scores.T, atol=1e-9):
            raise ValueError("similarity matrix must be symmetric")
        if not np.allclose(np.diag(scores), 1.0, atol=1e-9):
            raise ValueError("similarity matrix must have unit diagonal")
        if scores.size and (scores.min() < -1 - 1e-9 or scores.max() > 1 + 1e-9):
            raise ValueError("similarity scores must lie in [-1, 1]")
        scores = scores.copy()
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(
            self, "_index", {label: i for i, label in enumerate(self.labels)}
        )

    def score(self, a: str, b: str) -> float:
        idx = self._index  # type: ignore[attr-defined]
        return float(self.scores[idx[a], idx[b]])

    def restrict(self, labels: Iterable[str]) -> SimilarityMatrix:
        """Sub-matrix over ``labels`` in the given order."""
        subset = labels if isinstance(labels, LabelSet) else LabelSet(tuple(labels))
        idx = self._index  # type: ignore[attr-defined]
        missing = [x for x in subset if x not in idx]
        if missing:
            raise SimilarityMismatch(f"labels missing from matrix: {missing[:5]}")
        rows = [idx[x] for x in subset]
        return SimilarityMatrix(subset, self.scores[np.ix_(rows, rows)])


def _chunk(labels: Sequence[str], k: int) -> tuple[LabelSet, ...]:
    m = math.ceil(len(labels) / k)
    return tuple(LabelSet._trusted(tuple(labels[i * k : (i + 1) * k])) for i in range(m))


def partition_sequential(c: LabelSet, k: int) -> Partition:
    """Consecutive chunks of ``k`` in input order; the last holds the remainder."""
    k = check_group_size(k)
    return Partition(_chunk(c.labels, k), len(c))


def group_random(c: LabelSet, k: int, seed: int) -> Partition:
    """Shuffle with ``random.Random(seed).shuffle`` then chunk sequentially."""
    k = check_group_size(k)
    order = list(c.labels)
    random.Random(seed).shuffle(order)
    return Partition(_chunk(order, k), len(c))


def _check_cover(c: LabelSet, sim: SimilarityMatrix) -> None:
    if len(sim.labels) != len(c) or set(sim.labels) != set(c):
        raise SimilarityMismatch(
            f"similarity matrix covers {len(sim.labels)} labels, set has {len(c)}"
        )


def _greedy_clusters(c: LabelSet, k: int, sim: SimilarityMatrix) -> list[list[str]]:
    unassigned = set(c.labels)
    clusters: list[list[str]] = []
    while unassigned:
        seed = min(unassigned)
        unassigned.remove(seed)
        # highest similarity first, lexicographic among ties
        ranked = sorted(unassigned, key=lambda x: (-sim.score(seed, x), x))
        members = ranked[: k - 1]
        unassigned.difference_update(members)
        clusters.append([seed, *members])
    return clusters


def group_most_similar(c: LabelSet, k: int, sim: SimilarityMatrix) -> Partition:
    """Greedy coherent clusters.

    Repeatedly seed a group with the lexicographically smallest unassigned
    label and fill it with the ``k - 1`` unassigned labels most similar to
    the seed.
    """
    k = check_group_size(k)
    _check_cover(c, sim)
    clusters = _greedy_clusters(c, k, sim)
    return Partition(tuple(LabelSet(tuple(g)) for g in clusters), len(c))


def group_least_similar(c: LabelSet, k: int, sim: SimilarityMatrix) -> Partition:
    """Spread coherent clusters across groups.

    Members of the greedy clusters are dealt round-robin over the ``M``
    output groups; a group that has reached its capacity (``k``, or the
    remainder for the last group) is skipped.
    """
    k = check_group_size(k)
    _check_cover(c, sim)
    n = len(c)
    if n == 0:
        return Partition((), 0)
    m = math.ceil(n / k)
    capacity = [k] * (m - 1) + [n - k * (m - 1)]
    out: list[list[str]] = [[] for _ in range(m)]
    slot = 0
    for label in (x for cluster in _greedy_clusters(c, k, sim) for x in cluster):
        while len(out[slot]) >= capacity[slot]:
            slot = (slot + 1) % m
        out[slot].append(label)
        slot = (slot + 1) % m
    return Partition(tuple(LabelSet(tuple(g)) for g in out), n)


GROUPING_KINDS = ("sequential", "random", "most_similar", "least_similar")


@dataclass(frozen=True)
class Grouping:
    """Strategy selector used by the engine at every recursion level."""

    kind: str = "sequential"
    seed: int = 0
    sim: SimilarityMatrix | None = None

    def __post_init__(self) -> None:
        if self.kind not in GROUPING_KINDS:
            raise ValueError(f"unknown grouping {self.kind!r}; expected {GROUPING_KINDS}")
        if self.kind in ("most_similar", "least_similar") and self.sim is None:
            raise ValueError(f"grouping {self.kind!r} needs a similarity matrix")

    def apply(self, c: LabelSet, k: int) -> Partition:
        if self.kind == "sequential":
            return partition_sequential(c, k)
        if self.kind == "random":
            return group_random(c, k, self.seed)
        assert self.sim is not None
        sub = self.sim.restrict(c)
        if self.kind == "most_similar":
            return group_most_similar(c, k, sub)
        return group_least_similar(c, k, sub)

    def describe(self) -> str:
        return f"random({self.seed})" if self.kind == "random" else self.kind
