"""Deterministic synthetic trajectories with planted movement patterns.

Each trajectory lives inside one regime's daily window and walks a planted
digraph: every step follows the regime's transition table, except that with
probability ``personal_bias`` it follows the object's own preferred
successor instead. The planted tables are returned as ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .temporal import DAY
from .trajectory_core import Interner, Trajectory, TrajectoryStore, TrajectoryUnit

EPOCH_2013 = 1356998400  # 2013-01-01T00:00:00Z


@dataclass(frozen=True)
class SynthConfig:
    n_locations: int = 20
    out_degree: int = 5
    n_objects: int = 200
    trajectories_per_object: int = 10
    singleton_fraction: float = 0.73
    max_length: int = 8
    length_decay: float = 0.4
    # daily windows in seconds, [start, end); together they must tile the day
    regimes: tuple[tuple[int, int], ...] = ((0, DAY),)
    orthogonal: bool = False  # regimes use disjoint successor sets per location
    dirichlet_alpha: float | None = None  # None: uniform over successors
    transitions: tuple | None = None  # explicit per-regime m x m tables
    start_probs: tuple[float, ...] | None = None
    personal_bias: float = 0.0
    unit_gap: int = 300
    seed: int = 0

    def validate(self) -> None:
        m = self.n_locations
        if m < 1 or self.n_objects < 1 or self.trajectories_per_object < 1:
            raise ValueError("sizes must be positive")
        if not 0 <= self.singleton_fraction <= 1 or not 0 <= self.personal_bias <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.max_length < 1 or (self.max_length == 1 and self.singleton_fraction < 1):
            raise ValueError("max_length too small for the requested singleton fraction")
        if self.unit_gap < 1:
            raise ValueError("unit_gap must be >= 1 second")
        windows = sorted(self.regimes)
        if not windows or windows[0][0] != 0 or windows[-1][1] != DAY or any(
            a[1] != b[0] for a, b in zip(windows, windows[1:])
        ):
            raise ValueError("regime windows must tile the day exactly")
        if any(e - s <= (self.max_length - 1) * self.unit_gap for s, e in windows):
            raise ValueError("regime window too short for max_length trajectories")
        if self.transitions is not None:
            if len(self.transitions) != len(self.regimes):
                raise ValueError("need one transition table per regime")
            for table in self.transitions:
                arr = np.asarray(table, dtype=float)
                sums = arr.sum(axis=1)
                if arr.shape != (m, m) or (arr < 0).any() or not np.all(np.isclose(sums, 1) | (sums == 0)):
                    raise ValueError("transition tables must be m x m with rows summing to 1 or 0")
        else:
            needed = self.out_degree * (len(self.regimes) if self.orthogonal else 1)
            if m < 2 or self.out_degree < 1 or needed > m - 1:
                raise ValueError("out_degree too large for the number of locations")
        if self.start_probs is not None:
            sp = np.asarray(self.start_probs, dtype=float)
            if sp.shape != (m,) or (sp < 0).any() or not np.isclose(sp.sum(), 1):
                raise ValueError("start_probs must be a distribution over locations")


@dataclass
class GroundTruth:
    regimes: list[tuple[int, int]]
    transitions: np.ndarray  # [regime, location, next]
    personal_next: np.ndarray  # [object, location] preferred successor, -1 if none
    homes: np.ndarray  # [object]
    start_probs: np.ndarray
    length_probs: np.ndarray  # index L-1 -> P(length = L)
    personal_bias: float

    def regime_of(self, t: int) -> int:
        sec = t % DAY
        for r, (s, e) in enumerate(self.regimes):
            if s <= sec < e:
                return r
        raise ValueError("time outside every regime")

    def step_distribution(self, obj: int, location: int, regime: int) -> np.ndarray:
        """Planted next-location distribution for one object at one location."""
        row = self.transitions[regime, location]
        pref = self.personal_next[obj, location]
        if pref < 0:
            return row.copy()
        dist = (1 - self.personal_bias) * row
        dist[pref] += self.personal_bias
        return dist

    def to_json(self) -> dict:
        return {
            "format": "nlpmm-ground-truth",
            "version": 1,
            "regimes": [list(r) for r in self.regimes],
            "transitions": self.transitions.tolist(),
            "personal_next": self.personal_next.tolist(),
            "homes": self.homes.tolist(),
            "start_probs": self.start_probs.tolist(),
            "length_probs": self.length_probs.tolist(),
            "personal_bias": self.personal_bias,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruth":
        return cls(
            [tuple(r) for r in doc["regimes"]],
            np.array(doc["transitions"], dtype=float),
            np.array(doc["personal_next"], dtype=int),
            np.array(doc["homes"], dtype=int),
            np.array(doc["start_probs"], dtype=float),
            np.array(doc["length_probs"], dtype=float),
            doc["personal_bias"],
        )


@dataclass
class SynthResult:
    trajectories: list[Trajectory]
    truth: GroundTruth
    config: SynthConfig
    regime_of_trajectory: list[int] = field(default_factory=list)

    def store(self) -> TrajectoryStore:
        objects = Interner(f"O{i:05d}" for i in range(self.config.n_objects))
        locations = Interner(f"L{i:03d}" for i in range(self.config.n_locations))
        return TrajectoryStore(self.trajectories, objects, locations)


def length_distribution(cfg: SynthConfig) -> np.ndarray:
    probs = np.zeros(cfg.max_length)
    probs[0] = cfg.singleton_fraction
    if cfg.max_length > 1:
        tail = cfg.length_decay ** np.arange(cfg.max_length - 1)
        probs[1:] = (1 - cfg.singleton_fraction) * tail / tail.sum()
    return probs


def _planted_tables(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    m, n_regimes = cfg.n_locations, len(cfg.regimes)
    if cfg.transitions is not None:
        return np.array([np.asarray(t, dtype=float) for t in cfg.transitions])
    tables = np.zeros((n_regimes, m, m))
    for loc in range(m):
        others = np.array([j for j in range(m) if j != loc])
        if cfg.orthogonal:
            picked = rng.choice(others, size=cfg.out_degree * n_regimes, replace=False)
            succ = picked.reshape(n_regimes, cfg.out_degree)
        else:
            shared = rng.choice(others, size=cfg.out_degree, replace=False)
            succ = [shared] * n_regimes
        for r in range(n_regimes):
            if cfg.dirichlet_alpha is None:
                w = np.full(cfg.out_degree, 1.0 / cfg.out_degree)
            else:
                w = rng.dirichlet(np.full(cfg.out_degree, cfg.dirichlet_alpha))
            tables[r, loc, succ[r]] = w
    return tables


def generate(cfg: SynthConfig) -> SynthResult:
    """Generate trajectories; identical configs give identical output."""
    cfg.validate()
    m = cfg.n_locations
    windows = list(cfg.regimes)
    tables = _planted_tables(cfg, np.random.default_rng([cfg.seed, 0]))
    start = np.full(m, 1.0 / m) if cfg.start_probs is None else np.asarray(cfg.start_probs, dtype=float)
    lengths = length_distribution(cfg)
    regime_weights = np.array([e - s for s, e in windows], dtype=float) / DAY
    support = tables.sum(axis=0) > 0

    personal = np.full((cfg.n_objects, m), -1, dtype=int)
    homes = np.zeros(cfg.n_objects, dtype=int)
    for o in range(cfg.n_objects):
        orng = np.random.default_rng([cfg.seed, 1, o])
        homes[o] = orng.choice(m, p=start)
        for loc in range(m):
            succ = np.flatnonzero(support[loc])
            if succ.size:
                personal[o, loc] = orng.choice(succ)
    truth = GroundTruth(windows, tables, personal, homes, start, lengths, cfg.personal_bias)

    trajectories, regimes_used = [], []
    for o in range(cfg.n_objects):
        for i in range(cfg.trajectories_per_object):
            rng = np.random.default_rng([cfg.seed, 2, o, i])
            length = int(rng.choice(cfg.max_length, p=lengths)) + 1
            r = int(rng.choice(len(windows), p=regime_weights))
            bias_draws = rng.random(length)
            loc = int(homes[o]) if bias_draws[0] < cfg.personal_bias else int(rng.choice(m, p=start))
            seq = [loc]
            for step in range(1, length):
                pref = personal[o, loc]
                if pref >= 0 and bias_draws[step] < cfg.personal_bias:
                    loc = int(pref)
                else:
                    row = tables[r, loc]
                    if row.sum() == 0:
                        break
                    loc = int(rng.choice(m, p=row))
                seq.append(loc)
            s, e = windows[r]
            latest = e - (len(seq) - 1) * cfg.unit_gap - 1
            offset = int(rng.integers(s, latest + 1))
            # trajectories of one object sit two days apart so sessionizing never merges them
            t0 = EPOCH_2013 + 2 * i * DAY + offset
            units = tuple(TrajectoryUnit(l, t0 + j * cfg.unit_gap) for j, l in enumerate(seq))
            trajectories.append(Trajectory(o, units))
            regimes_used.append(r)
    return SynthResult(trajectories, truth, cfg, regimes_used)


def two_regime_config(**overrides) -> SynthConfig:
    """Morning (00:00-12:00) and afternoon (12:00-24:00) regimes."""
    params = dict(regimes=((0, DAY // 2), (DAY // 2, DAY)))
    params.update(overrides)
    return SynthConfig(**params)


def write_ground_truth(truth: GroundTruth, fh: IO[str]) -> None:
    json.dump(truth.to_json(), fh, separators=(",", ":"))
    fh.write("\n")


def read_ground_truth(fh: IO[str]) -> GroundTruth:
    return GroundTruth.from_json(json.load(fh))


def chain_config(chain: Sequence[int], n_locations: int, **overrides) -> SynthConfig:
    """Single-regime deterministic walk along ``chain`` starting at its head."""
    table = np.zeros((n_locations, n_locations))
    for a, b in zip(chain, chain[1:]):
        table[a, b] = 1.0
    start = np.zeros(n_locations)
    start[chain[0]] = 1.0
    params = dict(
        n_locations=n_locations,
        transitions=(tuple(map(tuple, table)),),
        start_probs=tuple(start),
        singleton_fraction=0.0,
        max_length=len(chain),
    )
    params.update(overrides)
    return SynthConfig(**params)
