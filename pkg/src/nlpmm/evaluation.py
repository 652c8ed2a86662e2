"""Ranking metrics, the train/test protocol and the experiment runner."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .ensemble import NLPMM, train_nlpmm
from .markov import DEFAULT_ORDER
from .temporal import (
    DEFAULT_BINS,
    DEFAULT_CLUSTERS,
    DEFAULT_MAX_ITER,
    TimeAwarePredictor,
    TimeBinConfig,
    build_time_aware,
)
from .trajectory_core import Trajectory, TrajectoryUnit

MODEL_VARIANTS = ("nlpmm", "nlpmm-tb", "nlpmm-dc", "gmm", "pmm")


class EvalExample(NamedTuple):
    object: int
    context: tuple[TrajectoryUnit, ...]
    truth: int

    @property
    def time(self) -> int:
        return self.context[-1].time


class EvalResult(NamedTuple):
    ranking: list[int]
    truth: int
    predicted: bool
    fallback: bool = False

    def rank(self) -> int | None:
        """1-based position of the truth in the ranking, or None."""
        try:
            return self.ranking.index(self.truth) + 1
        except ValueError:
            return None


def make_examples(test: Iterable[Trajectory]) -> list[EvalExample]:
    out = []
    for t in test:
        for i in range(1, len(t.units)):
            out.append(EvalExample(t.object, t.units[:i], t.units[i].location))
    return out


def prediction_coverage(results: Sequence[EvalResult]) -> float:
    if not results:
        return 0.0
    return sum(r.predicted for r in results) / len(results)


def accuracy_at_k(results: Sequence[EvalResult], k: int) -> float:
    if not results:
        return 0.0
    return sum(r.truth in r.ranking[:k] for r in results) / len(results)


def one_error(results: Sequence[EvalResult]) -> float:
    # defined through accuracy@1 so the identity holds bit for bit
    return 1.0 - accuracy_at_k(results, 1) if results else 0.0


def average_precision(results: Sequence[EvalResult], k: int) -> float:
    if not results:
        return 0.0
    total = 0.0
    for r in results:
        rank = r.rank()
        if rank is not None and rank <= k:
            total += 1.0 / rank
    return total / len(results)


@dataclass
class EvalReport:
    coverage: float
    accuracy: dict[int, float]
    one_error: float
    average_precision: float
    n_examples: int
    params: dict = field(default_factory=dict)


def summarize(results: Sequence[EvalResult], k: int, params: dict | None = None) -> EvalReport:
    return EvalReport(
        coverage=prediction_coverage(results),
        accuracy={j: accuracy_at_k(results, j) for j in range(1, k + 1)},
        one_error=one_error(results),
        average_precision=average_precision(results, k),
        n_examples=len(results),
        params=dict(params or {}),
    )


def predict_example(model: NLPMM | TimeAwarePredictor, ex: EvalExample, k: int) -> EvalResult:
    if isinstance(model, TimeAwarePredictor):
        pred = model.predict(ex.object, ex.context, k)
    else:
        pred = model.predict(ex.object, [u.location for u in ex.context[-model.order :]], k)
    return EvalResult(pred.ranking, ex.truth, pred.predicted, pred.fallback)


def evaluate(model, examples: Iterable[EvalExample], k: int) -> list[EvalResult]:
    return [predict_example(model, ex, k) for ex in examples]


def split_trajectories(
    ts: Sequence[Trajectory], fraction: float, rng: np.random.Generator
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Per object, shuffle its trajectories and send ``fraction`` of them to training."""
    if not 0 < fraction < 1:
        raise ValueError("split fraction must lie in (0, 1)")
    by_object: dict[int, list[Trajectory]] = {}
    for t in ts:
        by_object.setdefault(t.object, []).append(t)
    train, test = [], []
    objects = sorted(by_object)
    for idx in rng.permutation(len(objects)):
        group = by_object[objects[idx]]
        perm = rng.permutation(len(group))
        n_train = math.floor(fraction * len(group) + 0.5)
        train.extend(group[i] for i in perm[:n_train])
        test.extend(group[i] for i in perm[n_train:])
    return train, test


@dataclass(frozen=True)
class ExperimentConfig:
    variants: tuple[str, ...] = ("nlpmm",)
    order: int = DEFAULT_ORDER
    bins: int = DEFAULT_BINS
    clusters: int = DEFAULT_CLUSTERS
    topk: int = 1
    split: float = 0.8
    runs: int = 50
    seed: int = 0
    holdout: float = 0.0
    max_iter: int = DEFAULT_MAX_ITER
    offset: int = 0

    def validate(self) -> None:
        for v in self.variants:
            if v not in MODEL_VARIANTS:
                raise ValueError(f"unknown variant {v!r}")
        if self.order < 1 or self.topk < 1 or self.runs < 1:
            raise ValueError("order, topk and runs must be >= 1")
        if "nlpmm-dc" in self.variants and not 1 <= self.clusters <= self.bins:
            raise ValueError(f"need 1 <= clusters <= bins, got {self.clusters} clusters for {self.bins} bins")
        TimeBinConfig(self.bins, offset=self.offset)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = ",".join(self.variants)
        return d


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list[dict[str, EvalReport]]

    def mean(self, variant: str, metric: str, k: int | None = None) -> float:
        vals = []
        for run in self.runs:
            rep = run[variant]
            vals.append(rep.accuracy[k] if metric == "accuracy" else getattr(rep, metric))
        return float(np.mean(vals))

    def rows(self) -> list[tuple[str, str, str, str, float]]:
        """``(run, variant, metric, k, value)`` rows, per run then the means."""
        k = self.config.topk
        out = []

        def emit(run_label, variant, get):
            out.append((run_label, variant, "coverage", "-", get("coverage")))
            for j in range(1, k + 1):
                out.append((run_label, variant, "accuracy", str(j), get("accuracy", j)))
            out.append((run_label, variant, "one_error", "1", get("one_error")))
            out.append((run_label, variant, "average_precision", str(k), get("average_precision")))
            out.append((run_label, variant, "n_examples", "-", get("n_examples")))

        for i, run in enumerate(self.runs):
            for v in self.config.variants:
                rep = run[v]
                emit(str(i), v, lambda m, j=None, rep=rep: rep.accuracy[j] if m == "accuracy" else getattr(rep, m))
        for v in self.config.variants:
            emit("mean", v, lambda m, j=None, v=v: self.mean(v, m, j))
        return out

    def write(self, fh: IO[str]) -> None:
        for key, val in self.config.as_dict().items():
            fh.write(f"# {key}={val}\n")
        fh.write("run\tvariant\tmetric\tk\tvalue\n")
        for run, variant, metric, k, value in self.rows():
            fh.write(f"{run}\t{variant}\t{metric}\t{k}\t{value:.10f}\n")

    def table(self) -> str:
        k = self.config.topk
        cols = [("coverage", "coverage", None), ("acc@1", "accuracy", 1)]
        if k > 1:
            cols.append((f"acc@{k}", "accuracy", k))
        cols += [("one-err", "one_error", None), (f"avgprec@{k}", "average_precision", None)]
        head = f"{'variant':<10}" + "".join(f" {name:>10}" for name, _, _ in cols)
        lines = [head, "-" * len(head)]
        for v in self.config.variants:
            lines.append(f"{v:<10}" + "".join(f" {self.mean(v, metric, j):>10.4f}" for _, metric, j in cols))
        return "\n".join(lines)


def train_variant(
    variant: str, train: Sequence[Trajectory], m: int, cfg: ExperimentConfig, seed: int, base: NLPMM | None = None
):
    """Train one named model variant; ``base`` reuses an already trained plain model."""
    if variant in ("gmm", "pmm"):
        return train_nlpmm(train, m, cfg.order, variant)
    if base is None:
        base = train_nlpmm(train, m, cfg.order, "nlpmm", holdout=cfg.holdout, rng=np.random.default_rng(seed))
    if variant == "nlpmm":
        return base
    return build_time_aware(
        train, m, variant.split("-")[1], TimeBinConfig(cfg.bins, offset=cfg.offset), cfg.clusters,
        cfg.order, seed=seed, max_iter=cfg.max_iter, base=base, holdout=cfg.holdout,
    )


def run_experiment(ts: Sequence[Trajectory], m: int, cfg: ExperimentConfig) -> ExperimentReport:
    """Repeated random splits; every variant is scored on the same split per run."""
    cfg.validate()
    runs = []
    for run in range(cfg.runs):
        rng = np.random.default_rng([cfg.seed, run])
        train, test = split_trajectories(ts, cfg.split, rng)
        if not train or not test:
            raise ValueError("empty train or test split")
        examples = make_examples(test)
        model_seed = int(rng.integers(2**31))
        base = None
        reports = {}
        for v in cfg.variants:
            if v.startswith("nlpmm") and base is None:
                base = train_variant("nlpmm", train, m, cfg, model_seed)
            model = train_variant(v, train, m, cfg, model_seed, base)
            results = evaluate(model, examples, cfg.topk)
            reports[v] = summarize(results, cfg.topk, {"run": run, "variant": v})
        runs.append(reports)
    return ExperimentReport(cfg, runs)
