"""Command-line entry point: ``nlpmm {ingest,train,predict,evaluate,synth}``.

Exit codes: 0 success, 1 domain error, 2 I/O error. Settings resolve as
command-line flags, then ``--config`` file (flat ``key=value``), then defaults.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import train_nlpmm
from .evaluation import MODEL_VARIANTS, ExperimentConfig, run_experiment
from .markov import DEFAULT_ORDER
from .model_io import ModelBundle, load_model, save_model
from .synthgen import SynthConfig, generate, write_ground_truth
from .temporal import DAY, DEFAULT_BINS, DEFAULT_CLUSTERS, TimeAwarePredictor, TimeBinConfig, build_time_aware
from .trajectory_core import (
    DEFAULT_GAP,
    TrajectoryStore,
    TrajectoryUnit,
    dataset_stats,
    induce_candidates,
    load_store,
    parse_records,
    parse_timestamp,
    records_to_text,
    save_store,
    sessionize,
)

DEFAULTS = {
    "variant": "nlpmm",
    "order": DEFAULT_ORDER,
    "bins": DEFAULT_BINS,
    "clusters": DEFAULT_CLUSTERS,
    "topk": 1,
    "gap": DEFAULT_GAP,
    "split": 0.8,
    "runs": 50,
    "seed": None,
    "offset": 0,
    "holdout": 0.0,
    "delimiter": ",",
    # synth
    "locations": 20,
    "objects": 200,
    "per_object": 10,
    "singletons": 0.73,
    "max_length": 8,
    "out_degree": 5,
    "regimes": 2,
    "orthogonal": False,
    "alpha": None,
    "personal_bias": 0.0,
}

_TYPES = {
    "order": int, "bins": int, "clusters": int, "topk": int, "gap": float, "split": float,
    "runs": int, "seed": int, "offset": int, "holdout": float, "locations": int, "objects": int,
    "per_object": int, "singletons": float, "max_length": int, "out_degree": int, "regimes": int,
    "alpha": float, "personal_bias": float,
}


class CLIError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def read_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise CLIError(f"{path}:{lineno}: expected key=value")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key == "orthogonal":
            values[key] = val.lower() in ("1", "true", "yes")
        elif key in _TYPES:
            try:
                values[key] = _TYPES[key](val)
            except ValueError:
                raise CLIError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
        else:
            values[key] = val
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config file over defaults."""
    settings = dict(DEFAULTS)
    if args.config:
        try:
            settings.update(read_config_file(args.config))
        except OSError as exc:
            raise CLIError(f"cannot read config {args.config}: {exc.strerror}", 2) from None
    for key, val in vars(args).items():
        if val is not None and key not in ("command", "func", "config"):
            settings[key] = val
    return settings


def echo_config(command: str, settings: dict, keys) -> None:
    print(f"# command={command}", file=sys.stderr)
    for key in keys:
        print(f"# {key}={settings.get(key)}", file=sys.stderr)


def _open(path: str, mode: str = "r"):
    try:
        if "b" in mode:
            return open(path, mode)
        return open(path, mode, encoding="utf-8", newline="" if "w" in mode else None)
    except OSError as exc:
        raise CLIError(f"{path}: {exc.strerror}", 2) from None


def _require(settings: dict, *keys: str) -> None:
    for key in keys:
        if settings.get(key) is None:
            raise CLIError(f"--{key.replace('_', '-')} is required")


def cmd_ingest(s: dict) -> int:
    _require(s, "input", "output")
    echo_config("ingest", s, ("input", "output", "gap", "delimiter"))
    with _open(s["input"], "rb") as fh:
        try:
            records, objects, locations = parse_records(fh, delimiter=s["delimiter"])
        except ValueError as exc:
            raise CLIError(f"{s['input']}: {exc}") from None
    trajectories = sessionize(records, s["gap"])
    store = TrajectoryStore(trajectories, objects, locations)
    with _open(s["output"], "w") as fh:
        save_store(store, fh)
    if s.get("ids"):
        with _open(f"{s['ids']}.locations.csv", "w") as fh:
            fh.write(locations.to_text())
        with _open(f"{s['ids']}.objects.csv", "w") as fh:
            fh.write(objects.to_text())
    print(dataset_stats(trajectories, induce_candidates(trajectories)).summary())
    return 0


def _load_store(path: str) -> TrajectoryStore:
    with _open(path) as fh:
        try:
            return load_store(fh)
        except ValueError as exc:
            raise CLIError(f"{path}: {exc}") from None


def train_bundle(store: TrajectoryStore, s: dict) -> ModelBundle:
    variant = s["variant"]
    if variant not in MODEL_VARIANTS:
        raise CLIError(f"unknown variant {variant!r}; choose from {', '.join(MODEL_VARIANTS)}")
    if not store.trajectories:
        raise CLIError("cannot train on an empty store")
    seed = s["seed"] if s["seed"] is not None else 0
    if variant in ("nlpmm-tb", "nlpmm-dc"):
        cfg = TimeBinConfig(s["bins"], DAY, s["offset"])
        model = build_time_aware(
            store.trajectories, store.m, variant.split("-")[1], cfg, s["clusters"], s["order"],
            seed=seed, holdout=s["holdout"],
        )
    else:
        model = train_nlpmm(store.trajectories, store.m, s["order"], variant, s["holdout"], np.random.default_rng(seed))
    return ModelBundle(model, store.locations, store.objects, variant)


def cmd_train(s: dict) -> int:
    _require(s, "input", "output")
    echo_config("train", s, ("input", "output", "variant", "order", "bins", "clusters", "seed", "offset", "holdout"))
    store = _load_store(s["input"])
    try:
        bundle = train_bundle(store, s)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    with _open(s["output"], "w") as fh:
        save_model(bundle, fh)
    w = bundle.base.weights
    print(f"weights beta0={w.beta0:.6g} beta1={w.beta1:.6g} beta2={w.beta2:.6g}")
    if isinstance(bundle.model, TimeAwarePredictor):
        tp = bundle.model
        line = f"time={tp.variant} bins={tp.bins.bins} submodels={len(tp.models)}"
        if tp.variant == "dc":
            line += f" clusters={tp.n_clusters} clustered_locations={len(tp.assignment)}"
        if tp.equivalent_to_base():
            line += " equivalent-to-base"
        print(line)
    return 0


def cmd_predict(s: dict) -> int:
    _require(s, "input", "context")
    if s["topk"] < 1:
        raise CLIError("--topk must be >= 1")
    echo_config("predict", s, ("input", "object", "context", "time", "topk"))
    with _open(s["input"]) as fh:
        try:
            bundle = load_model(fh)
        except ValueError as exc:
            raise CLIError(f"{s['input']}: {exc}") from None
    names = [c.strip() for c in s["context"].split(",") if c.strip()]
    if not names:
        raise CLIError("--context must name at least one location")
    try:
        context = [bundle.locations.id_of(n) for n in names]
    except KeyError as exc:
        raise CLIError(f"unknown location {exc.args[0]}") from None
    obj = bundle.objects.get(s["object"], -1) if s.get("object") else -1
    if isinstance(bundle.model, TimeAwarePredictor):
        _require(s, "time")
        try:
            t = parse_timestamp(s["time"])
        except ValueError:
            raise CLIError(f"bad --time {s['time']!r}") from None
        pred = bundle.model.predict(obj, [TrajectoryUnit(loc, t) for loc in context], s["topk"])
    else:
        pred = bundle.model.predict(obj, context, s["topk"])
    for rank, (loc, score) in enumerate(zip(pred.ranking, pred.scores), 1):
        print(f"{rank}\t{bundle.locations.name_of(loc)}\t{score:.6f}")
    return 0


def cmd_evaluate(s: dict) -> int:
    _require(s, "input", "output", "seed")
    variants = tuple(v.strip() for v in s["variant"].split(",") if v.strip())
    cfg = ExperimentConfig(
        variants=variants, order=s["order"], bins=s["bins"], clusters=s["clusters"], topk=s["topk"],
        split=s["split"], runs=s["runs"], seed=s["seed"], holdout=s["holdout"], offset=s["offset"],
    )
    echo_config("evaluate", {**s, **cfg.as_dict()}, ("input", "output", *cfg.as_dict()))
    store = _load_store(s["input"])
    try:
        report = run_experiment(store.trajectories, store.m, cfg)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    with _open(s["output"], "w") as fh:
        report.write(fh)
    print(report.table())
    return 0


def cmd_synth(s: dict) -> int:
    _require(s, "output", "seed")
    keys = ("output", "truth", "records", "locations", "objects", "per_object", "singletons", "max_length",
            "out_degree", "regimes", "orthogonal", "alpha", "personal_bias", "seed")
    echo_config("synth", s, keys)
    n_regimes = s["regimes"]
    if n_regimes < 1 or DAY % n_regimes:
        raise CLIError("--regimes must divide the day evenly")
    width = DAY // n_regimes
    try:
        cfg = SynthConfig(
            n_locations=s["locations"], out_degree=s["out_degree"], n_objects=s["objects"],
            trajectories_per_object=s["per_object"], singleton_fraction=s["singletons"],
            max_length=s["max_length"], regimes=tuple((i * width, (i + 1) * width) for i in range(n_regimes)),
            orthogonal=bool(s["orthogonal"]), dirichlet_alpha=s["alpha"], personal_bias=s["personal_bias"],
            seed=s["seed"],
        )
        result = generate(cfg)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    store = result.store()
    with _open(s["output"], "w") as fh:
        save_store(store, fh)
    if s.get("truth"):
        with _open(s["truth"], "w") as fh:
            write_ground_truth(result.truth, fh)
    if s.get("records"):
        with _open(s["records"], "w") as fh:
            fh.write(records_to_text(store.trajectories, store.objects, store.locations))
    print(dataset_stats(store.trajectories, induce_candidates(store.trajectories)).summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlpmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--input", "-i")
        p.add_argument("--output", "-o")
        for flag in flags:
            opts = {
                "--variant": dict(help=f"one of {', '.join(MODEL_VARIANTS)}"),
                "--order": dict(type=int, help="maximum Markov order N"),
                "--bins": dict(type=int, help="number of daily time bins M"),
                "--clusters": dict(type=int, help="clusters Q for nlpmm-dc"),
                "--topk": dict(type=int),
                "--gap": dict(type=float, help="sessionization gap in seconds"),
                "--split": dict(type=float, help="training fraction"),
                "--runs": dict(type=int),
                "--seed": dict(type=int),
                "--offset": dict(type=int, help="local-time offset in seconds for binning"),
                "--holdout": dict(type=float, help="fraction held out to fit blend weights"),
            }[flag]
            p.add_argument(flag, **opts)

    p = sub.add_parser("ingest", help="parse raw records and sessionize them into a store")
    common(p, "--gap")
    p.add_argument("--delimiter")
    p.add_argument("--ids", help="path prefix for exported interning tables")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model from a store")
    common(p, "--variant", "--order", "--bins", "--clusters", "--seed", "--offset", "--holdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank next locations for a context")
    common(p, "--topk")
    p.add_argument("--object", help="external object id")
    p.add_argument("--context", help="comma-separated external location ids, oldest first")
    p.add_argument("--time", help="ISO-8601 timestamp of the last context unit")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="repeated train/test runs with a metrics report")
    common(p, "--variant", "--order", "--bins", "--clusters", "--topk", "--split", "--runs", "--seed",
           "--offset", "--holdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic store with planted patterns")
    common(p, "--seed")
    p.add_argument("--truth", help="ground-truth output path")
    p.add_argument("--records", help="also write raw records text")
    p.add_argument("--locations", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--per-object", dest="per_object", type=int)
    p.add_argument("--singletons", type=float)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--out-degree", dest="out_degree", type=int)
    p.add_argument("--regimes", type=int)
    p.add_argument("--orthogonal", action="store_true", default=None)
    p.add_argument("--alpha", type=float, help="Dirichlet concentration of planted distributions")
    p.add_argument("--personal-bias", dest="personal_bias", type=float)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(resolve(args))
    except CLIError as exc:
        print(f"nlpmm: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"nlpmm: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"nlpmm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
