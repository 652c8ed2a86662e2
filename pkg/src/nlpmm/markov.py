"""Variable-order Markov models over location sequences.

All orders 1..N share one context tree: a node is keyed by its context (the
locations immediately preceding a transition, oldest first) and holds the
counts of the locations observed next. The parent of context ``c`` is
``c[1:]``, so every node's context extends its parent's by one location.

Prediction uses the longest suffix of the query that exists in the tree.
Distributions are handled sparsely as ``{location: probability}`` dicts; the
``predict_*`` functions expand them to dense vectors of length ``m``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .trajectory_core import Trajectory, TrajectoryUnit, location_sequence

DEFAULT_ORDER = 3

Context = tuple[int, ...]
Distribution = dict[int, float]


class ContextTree:
    """Prefix statistics for orders 1..max_order."""

    def __init__(self, max_order: int):
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.max_order = max_order
        self._counts: dict[Context, dict[int, int]] = {}
        self._totals: dict[Context, int] = {}

    def add_sequence(self, seq: Sequence[int]) -> None:
        counts, totals, n = self._counts, self._totals, self.max_order
        for j in range(1, len(seq)):
            nxt = seq[j]
            for d in range(1, min(j, n) + 1):
                ctx = tuple(seq[j - d : j])
                node = counts.get(ctx)
                if node is None:
                    node = counts[ctx] = {}
                    totals[ctx] = 0
                node[nxt] = node.get(nxt, 0) + 1
                totals[ctx] += 1

    def add(self, context: Context, nxt: int, count: int = 1) -> None:
        if not 1 <= len(context) <= self.max_order:
            raise ValueError(f"context length {len(context)} outside 1..{self.max_order}")
        node = self._counts.setdefault(tuple(context), {})
        node[nxt] = node.get(nxt, 0) + count
        self._totals[tuple(context)] = self._totals.get(tuple(context), 0) + count

    def counts(self, context: Sequence[int]) -> dict[int, int]:
        return dict(self._counts.get(tuple(context), {}))

    def total(self, context: Sequence[int]) -> int:
        return self._totals.get(tuple(context), 0)

    def __contains__(self, context) -> bool:
        return self._totals.get(tuple(context), 0) > 0

    def __len__(self) -> int:
        return len(self._counts)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ContextTree)
            and self.max_order == other.max_order
            and self._counts == other._counts
        )

    def contexts(self) -> list[Context]:
        return sorted(self._counts, key=lambda c: (len(c), c))

    @staticmethod
    def parent(context: Context) -> Context:
        return context[1:]

    def longest_match(self, context: Sequence[int]) -> Context | None:
        """Deepest stored suffix of ``context`` with a positive total."""
        for d in range(min(len(context), self.max_order), 0, -1):
            ctx = tuple(context[len(context) - d :])
            if self._totals.get(ctx, 0) > 0:
                return ctx
        return None

    def distribution(self, context: Sequence[int]) -> Distribution:
        ctx = tuple(context)
        total = self._totals.get(ctx, 0)
        if total <= 0:
            return {}
        return {loc: c / total for loc, c in self._counts[ctx].items()}

    def predict(self, context: Sequence[int], exclude: "ContextTree | None" = None) -> Distribution:
        """Normalised counts at the longest matching suffix; ``{}`` if none.

        ``exclude`` holds counts to subtract first (a held-out sequence's
        own windows), giving leave-one-out predictions without a rebuild.
        """
        if exclude is None:
            ctx = self.longest_match(context)
            return {} if ctx is None else self.distribution(ctx)
        for d in range(min(len(context), self.max_order), 0, -1):
            ctx = tuple(context[len(context) - d :])
            own_total = exclude._totals.get(ctx, 0)
            total = self._totals.get(ctx, 0) - own_total
            if total > 0:
                if not own_total:
                    return {loc: c / total for loc, c in self._counts[ctx].items()}
                own = exclude._counts[ctx]
                return {
                    loc: (c - own.get(loc, 0)) / total
                    for loc, c in self._counts[ctx].items()
                    if c > own.get(loc, 0)
                }
        return {}

    def without(self, context: Sequence[int]) -> "ContextTree":
        """Copy of the tree with one node removed."""
        out = ContextTree(self.max_order)
        ctx = tuple(context)
        out._counts = {c: dict(v) for c, v in self._counts.items() if c != ctx}
        out._totals = {c: v for c, v in self._totals.items() if c != ctx}
        return out

    def triples(self) -> list[tuple[Context, int, int]]:
        """Flattened ``(context, next, count)`` rows in a canonical order."""
        return [
            (ctx, nxt, cnt)
            for ctx in self.contexts()
            for nxt, cnt in sorted(self._counts[ctx].items())
        ]

    @classmethod
    def from_triples(cls, max_order: int, rows: Iterable) -> "ContextTree":
        tree = cls(max_order)
        for ctx, nxt, cnt in rows:
            tree.add(tuple(ctx), int(nxt), int(cnt))
        return tree


def build_context_tree(sequences: Iterable[Sequence[int]], max_order: int) -> ContextTree:
    tree = ContextTree(max_order)
    for seq in sequences:
        tree.add_sequence(seq)
    return tree


def to_vector(dist: Distribution, m: int) -> np.ndarray:
    vec = np.zeros(m)
    for loc, p in dist.items():
        vec[loc] = p
    return vec


def normalize_counts(counts: dict[int, int]) -> Distribution:
    total = sum(counts.values())
    if total <= 0:
        return {}
    return {loc: c / total for loc, c in counts.items()}


@dataclass
class GlobalMarkovModel:
    tree: ContextTree
    m: int

    @property
    def order(self) -> int:
        return self.tree.max_order

    def predict_sparse(self, context: Sequence[int]) -> Distribution:
        return self.tree.predict(context)


def build_gmm(trajectories: Iterable[Trajectory], m: int, order: int = DEFAULT_ORDER) -> GlobalMarkovModel:
    return GlobalMarkovModel(build_context_tree((location_sequence(t) for t in trajectories), order), m)


def predict_gmm(model: GlobalMarkovModel, context: Sequence[int]) -> np.ndarray:
    if not len(context):
        raise ValueError("context must be non-empty")
    return to_vector(model.predict_sparse(context), model.m)


def zero_order_distribution(units: Iterable[TrajectoryUnit | int], m: int) -> np.ndarray:
    """Location frequencies over one object's units, normalised."""
    counts = Counter(u.location if isinstance(u, TrajectoryUnit) else u for u in units)
    return to_vector(normalize_counts(counts), m)


@dataclass
class PersonalMarkovModel:
    """Per-object context trees plus per-object location frequencies."""

    m: int
    order: int
    trees: dict[int, ContextTree] = field(default_factory=dict)
    unit_counts: dict[int, dict[int, int]] = field(default_factory=dict)

    def predict_sparse(
        self,
        obj: int,
        context: Sequence[int],
        exclude_tree: ContextTree | None = None,
        exclude_units: dict[int, int] | None = None,
    ) -> tuple[Distribution, str]:
        """Distribution and its source: ``"tree"``, ``"zero"`` or ``"none"``.

        The ``exclude_*`` arguments subtract one held-out trajectory's counts.
        """
        tree = self.trees.get(obj)
        if tree is not None:
            dist = tree.predict(context, exclude_tree)
            if dist:
                return dist, "tree"
        counts = self.unit_counts.get(obj)
        if counts and exclude_units:
            counts = {loc: c - exclude_units.get(loc, 0) for loc, c in counts.items()}
        if counts:
            dist = normalize_counts({loc: c for loc, c in counts.items() if c > 0})
            if dist:
                return dist, "zero"
        return {}, "none"

    def zero_order(self, obj: int) -> np.ndarray:
        return to_vector(normalize_counts(self.unit_counts.get(obj, {})), self.m)


def build_pmm(trajectories: Iterable[Trajectory], m: int, order: int = DEFAULT_ORDER) -> PersonalMarkovModel:
    if order < 1:
        raise ValueError("order must be >= 1")
    model = PersonalMarkovModel(m, order)
    for t in trajectories:
        seq = location_sequence(t)
        counts = model.unit_counts.setdefault(t.object, {})
        for loc in seq:
            counts[loc] = counts.get(loc, 0) + 1
        if len(seq) > 1:
            tree = model.trees.get(t.object)
            if tree is None:
                tree = model.trees[t.object] = ContextTree(order)
            tree.add_sequence(seq)
    return model


def predict_pmm(model: PersonalMarkovModel, obj: int, context: Sequence[int]) -> np.ndarray:
    if not len(context):
        raise ValueError("context must be non-empty")
    return to_vector(model.predict_sparse(obj, context)[0], model.m)
