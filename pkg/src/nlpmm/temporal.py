"""Time-aware prediction: equal-width time binning and distribution clustering.

Both variants reduce to one rule for building a sub-model: given a set of
time bins, keep the maximal runs of units whose bins all belong to the set
and train a full blended model on those runs. Time binning uses one bin per
set. Distribution clustering groups, per location, the bins whose
next-location distributions are similar, and routes a query through the
group containing the bin of its last unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .ensemble import NLPMM, Prediction, train_nlpmm
from .markov import DEFAULT_ORDER
from .trajectory_core import Trajectory, TrajectoryUnit

DAY = 86400
DEFAULT_BINS = 24
DEFAULT_CLUSTERS = 5
DEFAULT_MAX_ITER = 100
TIME_VARIANTS = ("tb", "dc")


@dataclass(frozen=True)
class TimeBinConfig:
    bins: int = DEFAULT_BINS
    span: int = DAY
    offset: int = 0  # seconds added to UTC before binning (local time)

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("number of bins must be >= 1")
        if self.span <= 0:
            raise ValueError("span must be positive")
        if self.span % self.bins:
            raise ValueError(f"span {self.span} is not divisible into {self.bins} equal bins")

    def bin_of(self, t: int) -> int:
        # integer form of floor(((t + offset) mod span) / (span / bins)); bins are half-open
        return ((int(t) + self.offset) % self.span) * self.bins // self.span


class TransitionDistribution(NamedTuple):
    location: int
    bin: int
    vector: np.ndarray


def _runs(labels: Sequence) -> list[tuple[int, int]]:
    """``(start, stop)`` spans of maximal runs of equal labels."""
    spans = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            spans.append((start, i))
            start = i
    return spans


def split_runs(t: Trajectory, label: Callable[[TrajectoryUnit], object]) -> list[tuple[object, Trajectory]]:
    """Maximal runs of consecutive units sharing the same label."""
    labels = [label(u) for u in t.units]
    if len(set(labels)) == 1:
        return [(labels[0], t)]
    return [(labels[a], Trajectory.trusted(t.object, t.units[a:b])) for a, b in _runs(labels)]


def assign_bins(ts: Iterable[Trajectory], cfg: TimeBinConfig) -> list[tuple[int, Trajectory]]:
    """Split trajectories at bin boundaries; each piece is tagged with its bin."""
    out = []
    for t in ts:
        out.extend(split_runs(t, lambda u: cfg.bin_of(u.time)))
    return out


class BinnedTrajectories:
    """Trajectories with the bin of every unit computed once."""

    def __init__(self, ts: Iterable[Trajectory], cfg: TimeBinConfig):
        self.cfg = cfg
        self.trajectories = list(ts)
        self.unit_bins = [[cfg.bin_of(u.time) for u in t.units] for t in self.trajectories]

    def restrict(self, bins: Iterable[int]) -> list[Trajectory]:
        """Maximal runs of units whose bins all lie in ``bins``."""
        keep = set(bins)
        if keep >= set(range(self.cfg.bins)):
            return list(self.trajectories)
        out = []
        for t, ub in zip(self.trajectories, self.unit_bins):
            inside = [b in keep for b in ub]
            if all(inside):
                out.append(t)
            elif any(inside):
                out.extend(Trajectory.trusted(t.object, t.units[a:b]) for a, b in _runs(inside) if inside[a])
        return out

    def binned(self) -> list[tuple[int, Trajectory]]:
        out = []
        for t, ub in zip(self.trajectories, self.unit_bins):
            if len(set(ub)) == 1:
                out.append((ub[0], t))
            else:
                out.extend((ub[a], Trajectory.trusted(t.object, t.units[a:b])) for a, b in _runs(ub))
        return out


def restrict_to_bins(ts: Iterable[Trajectory], cfg: TimeBinConfig, bins: Iterable[int]) -> list[Trajectory]:
    """Maximal runs of units whose bins all lie in ``bins``."""
    return BinnedTrajectories(ts, cfg).restrict(bins)


def transition_counts(binned: Iterable[tuple[int, Trajectory]], m: int, n_bins: int) -> np.ndarray:
    """First-order counts indexed ``[location, bin, next_location]``."""
    counts = np.zeros((m, n_bins, m))
    for b, t in binned:
        units = t.units
        for a, c in zip(units, units[1:]):
            counts[a.location, b, c.location] += 1
    return counts


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def transition_distributions(binned: Iterable[tuple[int, Trajectory]], m: int, n_bins: int) -> list[TransitionDistribution]:
    probs = _normalize_rows(transition_counts(binned, m, n_bins))
    return [TransitionDistribution(loc, b, probs[loc, b]) for loc in range(m) for b in range(n_bins)]


def cosine_similarity(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(p) * np.linalg.norm(q)
    if norm == 0:
        return 0.0
    return float(min(1.0, max(0.0, (p @ q) / norm)))


def _cosine_matrix(x: np.ndarray, centres: np.ndarray) -> np.ndarray:
    xn = np.linalg.norm(x, axis=1, keepdims=True)
    cn = np.linalg.norm(centres, axis=1, keepdims=True)
    num = x @ centres.T
    den = xn * cn.T
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


class ClusterResult(NamedTuple):
    labels: list[int]
    iterations: int


def cluster_bins_detailed(
    dists: np.ndarray,
    n_clusters: int,
    max_iter: int = DEFAULT_MAX_ITER,
    rng: np.random.Generator | int | None = None,
) -> ClusterResult:
    """Group time bins by cosine similarity of their distributions.

    Centres are seeded from randomly chosen bins with distinct non-zero
    distributions, so two identical bins are never both seeds. Empty bins
    have zero similarity to every centre and stay in cluster 0.
    """
    x = np.asarray(dists, dtype=float)
    n_bins = x.shape[0]
    if not 1 <= n_clusters <= n_bins:
        raise ValueError(f"need 1 <= clusters <= bins, got {n_clusters} clusters for {n_bins} bins")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    nonzero = x.sum(axis=1) > 0
    candidates, seen = [], set()
    for b in np.flatnonzero(nonzero):
        key = x[b].tobytes()
        if key not in seen:
            seen.add(key)
            candidates.append(b)
    if not candidates:
        return ClusterResult([0] * n_bins, 0)

    q = min(n_clusters, len(candidates))
    seeds = rng.choice(candidates, size=q, replace=False)
    centres = _normalize_rows(x[seeds])
    labels = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = np.argmax(_cosine_matrix(x, centres), axis=1)
        new[~nonzero] = 0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(q):
            members = x[(labels == c) & nonzero]
            if len(members):
                centres[c] = _normalize_rows(members.mean(axis=0))
    return ClusterResult([int(v) for v in labels], iterations)


def cluster_bins(dists, n_clusters, max_iter=DEFAULT_MAX_ITER, rng=None) -> list[int]:
    return cluster_bins_detailed(dists, n_clusters, max_iter, rng).labels


BinSet = tuple[int, ...]


@dataclass
class TimeAwarePredictor:
    """Sub-models keyed by sorted bin sets, with the plain model as fallback.

    ``assignment`` (clustering only) maps a location to its per-bin cluster
    labels. Queries whose routed bin set covers the whole cycle, or has no
    trained sub-model, go straight to ``base``.
    """

    variant: str
    bins: TimeBinConfig
    base: NLPMM
    models: dict[BinSet, NLPMM] = field(default_factory=dict)
    assignment: dict[int, list[int]] = field(default_factory=dict)
    n_clusters: int | None = None
    seed: int | None = None

    def route(self, location: int, b: int) -> BinSet:
        if self.variant == "tb":
            return (b,)
        labels = self.assignment.get(location)
        if labels is None:
            return tuple(range(self.bins.bins))
        return tuple(i for i, c in enumerate(labels) if c == labels[b])

    def model_for(self, location: int, t: int) -> NLPMM:
        return self.models.get(self.route(location, self.bins.bin_of(t)), self.base)

    def predict(self, obj: int, units: Sequence[TrajectoryUnit], k: int) -> Prediction:
        if not units:
            raise ValueError("context must be non-empty")
        last = units[-1]
        context = [u.location for u in units[-self.base.order :]]
        sub = self.model_for(last.location, last.time)
        if sub is not self.base:
            g, p = sub.components(obj, context)
            if g or (sub.variant == "pmm" and p):
                return sub.predict(obj, context, k)
            return self.base.predict(obj, context, k)._replace(fallback=True)
        return self.base.predict(obj, context, k)

    def equivalent_to_base(self) -> bool:
        return not self.models


def build_time_aware(
    ts: Sequence[Trajectory],
    m: int,
    variant: str,
    bins: TimeBinConfig | int = DEFAULT_BINS,
    n_clusters: int | None = DEFAULT_CLUSTERS,
    order: int = DEFAULT_ORDER,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    base: NLPMM | None = None,
    holdout: float = 0.0,
    model_variant: str = "nlpmm",
) -> TimeAwarePredictor:
    if variant not in TIME_VARIANTS:
        raise ValueError(f"unknown time-aware variant {variant!r}")
    cfg = bins if isinstance(bins, TimeBinConfig) else TimeBinConfig(bins)
    if variant == "dc" and (n_clusters is None or not 1 <= n_clusters <= cfg.bins):
        raise ValueError(f"need 1 <= clusters <= bins, got {n_clusters} clusters for {cfg.bins} bins")
    ts = list(ts)
    if base is None:
        base = train_nlpmm(ts, m, order, model_variant, holdout=holdout, rng=np.random.default_rng(seed))

    binned = BinnedTrajectories(ts, cfg)
    assignment: dict[int, list[int]] = {}
    if variant == "tb":
        keys = {(b,) for b in range(cfg.bins)}
    else:
        probs = _normalize_rows(transition_counts(binned.binned(), m, cfg.bins))
        keys = set()
        for loc in range(m):
            if not probs[loc].any():
                continue
            labels = cluster_bins(probs[loc], n_clusters, max_iter, np.random.default_rng([seed, loc]))
            assignment[loc] = labels
            for c in set(labels):
                keys.add(tuple(i for i, v in enumerate(labels) if v == c))

    full = tuple(range(cfg.bins))
    models: dict[BinSet, NLPMM] = {}
    for key in sorted(keys):
        if key == full:
            continue
        sub_ts = binned.restrict(key)
        if not sub_ts:
            continue
        models[key] = train_nlpmm(
            sub_ts, m, order, model_variant, holdout=holdout,
            rng=np.random.default_rng([seed, *key]), fallback_weights=base.weights,
        )
    return TimeAwarePredictor(variant, cfg, base, models, assignment, n_clusters if variant == "dc" else None, seed)


def predict_time_aware(tp: TimeAwarePredictor, obj: int, units: Sequence[TrajectoryUnit], k: int) -> list[int]:
    return tp.predict(obj, units, k).ranking
