"""Versioned JSON model documents.

Trees are stored as flat ``[context, next, count]`` rows so a round trip is
lossless on counts; blend weights are written as decimal strings with 17
significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

from .ensemble import NLPMM, BlendWeights
from .markov import ContextTree, GlobalMarkovModel, PersonalMarkovModel
from .temporal import TimeAwarePredictor, TimeBinConfig
from .trajectory_core import Interner

MODEL_FORMAT = "nlpmm-model"
MODEL_VERSION = 1


@dataclass
class ModelBundle:
    """A trained predictor together with the interning tables it was built with."""

    model: NLPMM | TimeAwarePredictor
    locations: Interner
    objects: Interner
    variant: str

    @property
    def base(self) -> NLPMM:
        return self.model.base if isinstance(self.model, TimeAwarePredictor) else self.model


def _tree_rows(tree: ContextTree) -> list:
    return [[list(ctx), nxt, cnt] for ctx, nxt, cnt in tree.triples()]


def _weights_doc(w: BlendWeights) -> list[str]:
    return [format(b, ".16e") for b in (w.beta0, w.beta1, w.beta2)]


def nlpmm_to_doc(model: NLPMM) -> dict:
    pmm = model.pmm
    return {
        "variant": model.variant,
        "weights": _weights_doc(model.weights),
        "gmm": _tree_rows(model.gmm.tree),
        "pmm_trees": [[obj, _tree_rows(pmm.trees[obj])] for obj in sorted(pmm.trees)],
        "pmm_units": [
            [obj, [[loc, c] for loc, c in sorted(pmm.unit_counts[obj].items())]]
            for obj in sorted(pmm.unit_counts)
        ],
    }


def nlpmm_from_doc(doc: dict, m: int, order: int) -> NLPMM:
    gmm = GlobalMarkovModel(ContextTree.from_triples(order, doc["gmm"]), m)
    pmm = PersonalMarkovModel(m, order)
    for obj, rows in doc["pmm_trees"]:
        pmm.trees[obj] = ContextTree.from_triples(order, rows)
    for obj, rows in doc["pmm_units"]:
        pmm.unit_counts[obj] = {loc: c for loc, c in rows}
    weights = BlendWeights(*(float(b) for b in doc["weights"]))
    return NLPMM(gmm, pmm, weights, doc["variant"])


def bundle_to_doc(bundle: ModelBundle) -> dict:
    base = bundle.base
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variant": bundle.variant,
        "m": base.m,
        "order": base.order,
        "locations": bundle.locations.names,
        "objects": bundle.objects.names,
        "base": nlpmm_to_doc(base),
    }
    tp = bundle.model
    if isinstance(tp, TimeAwarePredictor):
        doc["time"] = {
            "method": tp.variant,
            "bins": tp.bins.bins,
            "span": tp.bins.span,
            "offset": tp.bins.offset,
            "clusters": tp.n_clusters,
            "seed": tp.seed,
            "equivalent_to_base": tp.equivalent_to_base(),
            "assignments": [
                [loc, b, c] for loc in sorted(tp.assignment) for b, c in enumerate(tp.assignment[loc])
            ],
            "submodels": [{"bins": list(key), "model": nlpmm_to_doc(sub)} for key, sub in sorted(tp.models.items())],
        }
    return doc


def bundle_from_doc(doc: dict) -> ModelBundle:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not an nlpmm model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    m, order = doc["m"], doc["order"]
    base = nlpmm_from_doc(doc["base"], m, order)
    model: NLPMM | TimeAwarePredictor = base
    if "time" in doc:
        td = doc["time"]
        assignment: dict[int, list[int]] = {}
        for loc, b, c in td["assignments"]:
            assignment.setdefault(loc, [0] * td["bins"])[b] = c
        model = TimeAwarePredictor(
            td["method"],
            TimeBinConfig(td["bins"], td["span"], td["offset"]),
            base,
            {tuple(s["bins"]): nlpmm_from_doc(s["model"], m, order) for s in td["submodels"]},
            assignment,
            td["clusters"],
            td["seed"],
        )
    return ModelBundle(model, Interner(doc["locations"]), Interner(doc["objects"]), doc["variant"])


def save_model(bundle: ModelBundle, fh: IO[str]) -> None:
    json.dump(bundle_to_doc(bundle), fh, separators=(",", ":"))
    fh.write("\n")


def load_model(fh: IO[str]) -> ModelBundle:
    return bundle_from_doc(json.load(fh))
