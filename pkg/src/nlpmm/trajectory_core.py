"""Passage records, trajectories and the preprocessing that links them.

Locations and objects are interned to dense integer ids on ingestion so the
Markov models can work with fixed-length probability vectors.
"""

from __future__ import annotations

import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, NamedTuple, Sequence

DEFAULT_GAP = 1800
STORE_FORMAT = "nlpmm-store"
STORE_VERSION = 1

_HEADER_NAMES = {"time", "timestamp", "t", "datetime"}


class ParseError(ValueError):
    """A malformed input row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class Interner:
    """Bijective mapping between external string ids and dense integers."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._index[name] = idx
        return idx

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown id {name!r}") from None

    def get(self, name: str, default=None):
        return self._index.get(name, default)

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Interner) and self._names == other._names

    def to_text(self, delimiter: str = ",") -> str:
        """Two-column export: external_id, dense_id."""
        return "".join(f"{name}{delimiter}{i}\n" for i, name in enumerate(self._names))

    @classmethod
    def from_text(cls, text: str, delimiter: str = ",") -> "Interner":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            name, _, idx = line.rpartition(delimiter)
            try:
                rows.append((int(idx), name))
            except ValueError:
                raise ParseError(lineno, f"bad dense id {idx!r}") from None
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError("interning table ids are not dense 0..n-1")
        return cls(name for _, name in rows)


class PassageRecord(NamedTuple):
    object: int
    location: int
    time: int


class TrajectoryUnit(NamedTuple):
    location: int
    time: int


@dataclass(frozen=True)
class Trajectory:
    object: int
    units: tuple[TrajectoryUnit, ...]

    def __post_init__(self):
        if not self.units:
            raise ValueError("trajectory must contain at least one unit")
        times = [u.time for u in self.units]
        if any(a >= b for a, b in zip(times, times[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    @classmethod
    def trusted(cls, obj: int, units: tuple[TrajectoryUnit, ...]) -> "Trajectory":
        """Construct without validation; for slices of an already valid trajectory."""
        t = object.__new__(cls)
        object.__setattr__(t, "object", obj)
        object.__setattr__(t, "units", units)
        return t

    def __len__(self) -> int:
        return len(self.units)

    @property
    def locations(self) -> list[int]:
        return [u.location for u in self.units]


@dataclass(frozen=True)
class DatasetStats:
    n_trajectories: int
    length_histogram: dict[int, int]
    candidate_counts: dict[int, int]
    singleton_fraction: float
    mean_candidates: float

    def summary(self) -> str:
        return (
            f"trajectories={self.n_trajectories} "
            f"singletons={self.singleton_fraction:.2f} "
            f"mean_candidates={self.mean_candidates:.2f}"
        )


@dataclass
class TrajectoryStore:
    """Sessionized trajectories together with their interning tables."""

    trajectories: list[Trajectory]
    objects: Interner = field(default_factory=Interner)
    locations: Interner = field(default_factory=Interner)

    @property
    def m(self) -> int:
        return len(self.locations)


def parse_timestamp(text: str) -> int:
    """ISO-8601 to integer seconds since the epoch; naive times are UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(t: int) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def _as_text_lines(stream) -> Iterable[str]:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8")


def parse_records(
    stream: bytes | str | IO,
    delimiter: str = ",",
    header: bool | None = None,
    objects: Interner | None = None,
    locations: Interner | None = None,
) -> tuple[list[PassageRecord], Interner, Interner]:
    """Parse ``object,location,timestamp`` rows into passage records.

    ``header=None`` auto-detects a header row by its third column name.
    Pre-populated interners fix the id assignment for declared universes.
    """
    objects = objects if objects is not None else Interner()
    locations = locations if locations is not None else Interner()
    records: list[PassageRecord] = []
    for lineno, raw in enumerate(_as_text_lines(stream), 1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(delimiter)]
        if lineno == 1 and header is not False and len(parts) == 3:
            if header or parts[2].lower() in _HEADER_NAMES:
                continue
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise ParseError(lineno, f"expected 3 fields, got {line!r}")
        try:
            t = parse_timestamp(parts[2])
        except ValueError:
            raise ParseError(lineno, f"unrecognised timestamp {parts[2]!r}") from None
        if t < 0:
            raise ParseError(lineno, "timestamp before the epoch")
        records.append(PassageRecord(objects.intern(parts[0]), locations.intern(parts[1]), t))
    return records, objects, locations


def sessionize(records: Sequence[PassageRecord], gap: float = DEFAULT_GAP) -> list[Trajectory]:
    """Split each object's time-ordered records wherever the gap exceeds ``gap``.

    Output is ordered by object id, then time. Duplicate (object, time)
    records keep the first occurrence in input order.
    """
    if gap <= 0:
        raise ValueError("gap must be positive")
    by_object: dict[int, list[PassageRecord]] = {}
    for rec in records:
        by_object.setdefault(rec.object, []).append(rec)

    out: list[Trajectory] = []
    for obj in sorted(by_object):
        recs = sorted(by_object[obj], key=lambda r: r.time)  # stable: ties keep input order
        units: list[TrajectoryUnit] = []
        for rec in recs:
            if units and rec.time == units[-1].time:
                continue
            if units and rec.time - units[-1].time > gap:
                out.append(Trajectory(obj, tuple(units)))
                units = []
            units.append(TrajectoryUnit(rec.location, rec.time))
        if units:
            out.append(Trajectory(obj, tuple(units)))
    return out


def location_sequence(t: Trajectory | Sequence[TrajectoryUnit]) -> list[int]:
    units = t.units if isinstance(t, Trajectory) else t
    return [u.location for u in units]


def induce_candidates(ts: Iterable[Trajectory]) -> dict[int, frozenset[int]]:
    """Map each observed location to the set of its immediate successors."""
    found: dict[int, set[int]] = {}
    for t in ts:
        seq = location_sequence(t)
        for loc in seq:
            found.setdefault(loc, set())
        for a, b in zip(seq, seq[1:]):
            found[a].add(b)
    return {loc: frozenset(succ) for loc, succ in found.items()}


def dataset_stats(ts: Sequence[Trajectory], cm: dict[int, frozenset[int]]) -> DatasetStats:
    hist = Counter(len(t) for t in ts)
    n = len(ts)
    counts = {loc: len(c) for loc, c in cm.items()}
    nonempty = [c for c in counts.values() if c > 0]
    return DatasetStats(
        n_trajectories=n,
        length_histogram=dict(sorted(hist.items())),
        candidate_counts=counts,
        singleton_fraction=hist.get(1, 0) / n if n else 0.0,
        mean_candidates=sum(nonempty) / len(nonempty) if nonempty else 0.0,
    )


def save_store(store: TrajectoryStore, fh: IO[str]) -> None:
    doc = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "objects": store.objects.names,
        "locations": store.locations.names,
        "trajectories": [
            [t.object, [[u.location, u.time] for u in t.units]] for t in store.trajectories
        ],
    }
    json.dump(doc, fh, separators=(",", ":"))
    fh.write("\n")


def load_store(fh: IO[str]) -> TrajectoryStore:
    doc = json.load(fh)
    if doc.get("format") != STORE_FORMAT:
        raise ValueError("not a trajectory store")
    if doc.get("version") != STORE_VERSION:
        raise ValueError(f"unsupported store version {doc.get('version')}")
    trajectories = [
        Trajectory(obj, tuple(TrajectoryUnit(loc, t) for loc, t in units))
        for obj, units in doc["trajectories"]
    ]
    return TrajectoryStore(trajectories, Interner(doc["objects"]), Interner(doc["locations"]))


def records_to_text(
    trajectories: Iterable[Trajectory], objects: Interner, locations: Interner, delimiter: str = ","
) -> str:
    """Render trajectories back to the raw record format ``parse_records`` reads."""
    lines = []
    for t in trajectories:
        obj = objects.name_of(t.object)
        for u in t.units:
            lines.append(f"{obj}{delimiter}{locations.name_of(u.location)}{delimiter}{format_timestamp(u.time)}\n")
    return "".join(lines)
