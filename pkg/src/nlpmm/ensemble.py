"""Linear blend of the global and personal models, and top-k ranking.

The blend estimates the next-location indicator vector as
``beta0 + beta1 * p_global + beta2 * p_personal`` and fits the three
coefficients by least squares over every location of every training
transition. The fit only needs the 3x3 Gram matrix of that stacked system,
which is accumulated directly from sparse distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .markov import (
    DEFAULT_ORDER,
    Distribution,
    GlobalMarkovModel,
    PersonalMarkovModel,
    build_gmm,
    ContextTree,
    build_pmm,
    to_vector,
)
from .trajectory_core import Trajectory, location_sequence

VARIANTS = ("nlpmm", "gmm", "pmm")

# singular values of the Gram matrix below this fraction of the largest are
# treated as zero, which yields the minimum-norm solution for collinear inputs
_RCOND = 1e-12


@dataclass(frozen=True)
class BlendWeights:
    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not all(np.isfinite([self.beta0, self.beta1, self.beta2])):
            raise ValueError("blend weights must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2])


GMM_ONLY = BlendWeights(0.0, 1.0, 0.0)
PMM_ONLY = BlendWeights(0.0, 0.0, 1.0)


class BlendAccumulator:
    """Running normal equations ``X'X beta = X'y`` of the stacked system."""

    def __init__(self):
        # sums of: rows, p1, p2, p1^2, p1*p2, p2^2, y, p1*y, p2*y
        self._s = [0.0] * 9
        self.n = 0

    @property
    def gram(self) -> np.ndarray:
        rows, s1, s2, s11, s12, s22 = self._s[:6]
        return np.array([[rows, s1, s2], [s1, s11, s12], [s2, s12, s22]])

    @property
    def rhs(self) -> np.ndarray:
        return np.array(self._s[6:])

    def add_dense(self, gmm_vec: np.ndarray, pmm_vec: np.ndarray, indicator: np.ndarray) -> None:
        g, p, y = (np.asarray(v, dtype=float) for v in (gmm_vec, pmm_vec, indicator))
        if not g.shape == p.shape == y.shape:
            raise ValueError("vectors must share length m")
        terms = (g.size, g.sum(), p.sum(), g @ g, g @ p, p @ p, y.sum(), g @ y, p @ y)
        self._s = [a + float(b) for a, b in zip(self._s, terms)]
        self.n += 1

    def add_sparse(self, gmm: Distribution, pmm: Distribution, truth: int, m: int) -> None:
        """Add one transition whose indicator is one-hot at ``truth``."""
        s = self._s
        s[0] += m
        s[1] += sum(gmm.values())
        s[2] += sum(pmm.values())
        s[3] += sum(v * v for v in gmm.values())
        if len(gmm) < len(pmm):
            s[4] += sum(v * pmm.get(k, 0.0) for k, v in gmm.items())
        else:
            s[4] += sum(v * gmm.get(k, 0.0) for k, v in pmm.items())
        s[5] += sum(v * v for v in pmm.values())
        s[6] += 1.0
        s[7] += gmm.get(truth, 0.0)
        s[8] += pmm.get(truth, 0.0)
        self.n += 1

    def solve(self) -> BlendWeights:
        if self.n == 0:
            raise ValueError("cannot fit blend weights without examples")
        beta = np.linalg.pinv(self.gram, rcond=_RCOND, hermitian=True) @ self.rhs
        return BlendWeights(*(float(b) for b in beta))


def fit_blend(examples: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> BlendWeights:
    """Least-squares blend weights from ``(gmm_vec, pmm_vec, indicator)`` triples."""
    acc = BlendAccumulator()
    for g, p, y in examples:
        acc.add_dense(g, p, y)
    return acc.solve()


def blend_predict(w: BlendWeights, gmm_vec: np.ndarray, pmm_vec: np.ndarray) -> np.ndarray:
    return w.beta0 + w.beta1 * np.asarray(gmm_vec, dtype=float) + w.beta2 * np.asarray(pmm_vec, dtype=float)


def top_k(scores: Sequence[float], k: int, restrict: Iterable[int] | None = None) -> list[int]:
    """Indices of the k highest scores; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=float)
    ids = np.arange(scores.size) if restrict is None else np.array(sorted(set(restrict)), dtype=int)
    if ids.size == 0:
        return []
    vals = scores[ids]
    keep = ~np.isnan(vals) & (vals > -np.inf)
    ids, vals = ids[keep], vals[keep]
    order = np.lexsort((ids, -vals))
    return [int(i) for i in ids[order[:k]]]


def rank_sparse(scores: dict[int, float], k: int) -> list[tuple[int, float]]:
    """Same ordering rule as :func:`top_k` over a ``{location: score}`` dict."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


class Prediction(NamedTuple):
    ranking: list[int]
    scores: list[float]
    predicted: bool
    fallback: bool = False


@dataclass
class NLPMM:
    """Global and personal models combined with fitted blend weights.

    ``variant`` selects the full blend or one component alone. Scores are
    ranked over the union of the supports of the components in use, so a
    query with no information from any component yields no ranking. When
    only one component has information, it is used on its own.
    """

    gmm: GlobalMarkovModel
    pmm: PersonalMarkovModel
    weights: BlendWeights
    variant: str = "nlpmm"

    @property
    def m(self) -> int:
        return self.gmm.m

    @property
    def order(self) -> int:
        return self.gmm.order

    def components(self, obj: int, context: Sequence[int]) -> tuple[Distribution, Distribution]:
        g = self.gmm.predict_sparse(context) if self.variant != "pmm" else {}
        p = self.pmm.predict_sparse(obj, context)[0] if self.variant != "gmm" else {}
        return g, p

    def effective_weights(self, g: Distribution, p: Distribution) -> BlendWeights:
        """Blend weights, or the informative component alone when the other is empty."""
        if self.variant == "nlpmm":
            if g and not p:
                return GMM_ONLY
            if p and not g:
                return PMM_ONLY
        return self.weights

    def score_components(self, g: Distribution, p: Distribution) -> dict[int, float]:
        w = self.effective_weights(g, p)
        return {
            loc: w.beta0 + w.beta1 * g.get(loc, 0.0) + w.beta2 * p.get(loc, 0.0)
            for loc in g.keys() | p.keys()
        }

    def predict(self, obj: int, context: Sequence[int], k: int) -> Prediction:
        g, p = self.components(obj, context)
        ranked = rank_sparse(self.score_components(g, p), k)
        return Prediction([loc for loc, _ in ranked], [s for _, s in ranked], bool(ranked))

    def score_vector(self, obj: int, context: Sequence[int]) -> np.ndarray:
        """Dense scores over all m locations, same weights as :meth:`predict`."""
        g, p = self.components(obj, context)
        return blend_predict(self.effective_weights(g, p), to_vector(g, self.m), to_vector(p, self.m))


def transition_examples(trajectories: Iterable[Trajectory], order: int):
    """Yield ``(object, context, truth)`` for every transition; context is capped at ``order``."""
    for t in trajectories:
        seq = location_sequence(t)
        for i in range(1, len(seq)):
            yield t.object, seq[max(0, i - order) : i], seq[i]


def fit_model_weights(gmm: GlobalMarkovModel, pmm: PersonalMarkovModel, trajectories: Iterable[Trajectory]) -> BlendAccumulator:
    acc = BlendAccumulator()
    for obj, ctx, truth in transition_examples(trajectories, gmm.order):
        acc.add_sparse(gmm.predict_sparse(ctx), pmm.predict_sparse(obj, ctx)[0], truth, gmm.m)
    return acc


def fit_model_weights_loo(
    gmm: GlobalMarkovModel, pmm: PersonalMarkovModel, trajectories: Iterable[Trajectory]
) -> BlendAccumulator:
    """Gram accumulation where every trajectory is scored with its own counts removed.

    Both models must have been built from ``trajectories``.
    """
    acc = BlendAccumulator()
    order, m = gmm.order, gmm.m
    for t in trajectories:
        seq = location_sequence(t)
        if len(seq) < 2:
            continue
        own = ContextTree(order)
        own.add_sequence(seq)
        units: dict[int, int] = {}
        for loc in seq:
            units[loc] = units.get(loc, 0) + 1
        for i in range(1, len(seq)):
            ctx = seq[max(0, i - order) : i]
            g = gmm.tree.predict(ctx, own)
            p = pmm.predict_sparse(t.object, ctx, own, units)[0]
            acc.add_sparse(g, p, seq[i], m)
    return acc


def train_nlpmm(
    trajectories: Sequence[Trajectory],
    m: int,
    order: int = DEFAULT_ORDER,
    variant: str = "nlpmm",
    holdout: float = 0.0,
    rng: np.random.Generator | None = None,
    fallback_weights: BlendWeights | None = None,
    blend_fit: str = "loo",
) -> NLPMM:
    """Train both component models and the blend.

    The weights are fitted on the training transitions. With the default
    ``blend_fit="loo"`` each transition is scored by models that exclude its
    own trajectory; ``"insample"`` scores with the full models. With
    ``holdout > 0`` the weights are instead fitted on a random fraction of
    the trajectories scored by models trained on the rest. The final
    components always use every trajectory. ``fallback_weights`` is used when
    no transition is available to fit on; otherwise that case is an error.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    trajectories = list(trajectories)
    gmm = build_gmm(trajectories, m, order)
    pmm = build_pmm(trajectories, m, order)
    if variant == "gmm":
        return NLPMM(gmm, pmm, GMM_ONLY, variant)
    if variant == "pmm":
        return NLPMM(gmm, pmm, PMM_ONLY, variant)

    if holdout > 0:
        if not 0 < holdout < 1:
            raise ValueError("holdout must lie in (0, 1)")
        rng = rng if rng is not None else np.random.default_rng(0)
        mask = rng.random(len(trajectories)) < holdout
        fit_set = [t for t, h in zip(trajectories, mask) if h]
        rest = [t for t, h in zip(trajectories, mask) if not h]
        acc = fit_model_weights(build_gmm(rest, m, order), build_pmm(rest, m, order), fit_set)
    elif blend_fit == "loo":
        acc = fit_model_weights_loo(gmm, pmm, trajectories)
    elif blend_fit == "insample":
        acc = fit_model_weights(gmm, pmm, trajectories)
    else:
        raise ValueError(f"unknown blend_fit {blend_fit!r}")

    if acc.n == 0:
        if fallback_weights is None:
            raise ValueError("no transitions available to fit blend weights")
        weights = fallback_weights
    else:
        weights = acc.solve()
    return NLPMM(gmm, pmm, weights, variant)
