"""Strict JSON run manifests.

Unknown fields anywhere in the document are rejected, and the ``version``
tag must equal :data:`MANIFEST_VERSION`.
"""
from __future__ import annotations

import json

import jsonschema

from .errors import ValidationError
from .harness import EXPERIMENTS, ExperimentConfig
from .measures import SetSpec

MANIFEST_VERSION = "1"


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nums = {"type": "array", "items": _num}

SCHEMA = _obj({
    "version": {"type": "string"},
    "experiments": {"type": "array", "items": {"enum": list(EXPERIMENTS)}, "minItems": 1},
    "output_dir": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "replicates": {"type": "integer", "minimum": 1},
    "gate_policy": {"enum": ["3se", "5se", "report-only"]},
    "threads": {"type": "integer", "minimum": 1},
    "bridge": {"type": "boolean"},
    "kernel": _obj({"eta1": _num, "eta2": _num, "k0_constant": _num}),
    "grid": _obj({"dim": {"enum": [1, 2]}, "points_per_side": {"type": "integer"}, "box_side": _num}),
    "schedule": _obj({"t_max": _pos, "max_step": _pos, "snapshots": _nums}),
    "families": _obj({
        "q": _nums, "q_main": _num, "alpha_gaps": _nums, "eps": _nums,
        "mollifiers": {"type": "array", "items": {"enum": ["standard", "narrow"]}},
    }),
    "sets": {"type": "array", "items": _obj({
        "name": {"type": "string"},
        "boxes": {"type": "array", "minItems": 1,
                  "items": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}},
    }, required=("name", "boxes"))},
    "gauge": _obj({"t": _pos, "q": _num, "levels": {"type": "integer", "minimum": 1}}),
    "tail": _obj({"q": _nums}),
    "formula": _obj({"paths": {"type": "integer", "minimum": 1000},
                     "cameron_martin_replicates": {"type": "integer", "minimum": 100}}),
    "snapshot_output": _obj({"format": {"enum": ["csv", "npy"]}, "replicates": {"type": "integer", "minimum": 1}}),
}, required=("version", "experiments", "seed", "replicates"))


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"manifest invalid at {where}: {exc.message}") from None
    if doc["version"] != MANIFEST_VERSION:
        raise ValidationError(f"manifest version {doc['version']!r} does not match {MANIFEST_VERSION!r}")


def config_from_manifest(doc: dict, seed_override: int | None = None, gate_policy: str | None = None,
                         threads: int | None = None) -> ExperimentConfig:
    validate(doc)
    kw = {
        "experiments": tuple(doc["experiments"]),
        "seed": doc["seed"] if seed_override is None else int(seed_override),
        "replicates": doc["replicates"],
    }
    if "gate_policy" in doc:
        kw["gate_policy"] = doc["gate_policy"]
    if gate_policy is not None:
        kw["gate_policy"] = gate_policy
    if "threads" in doc:
        kw["threads"] = doc["threads"]
    if threads is not None:
        kw["threads"] = threads
    if "bridge" in doc:
        kw["bridge"] = doc["bridge"]
    kw.update(doc.get("kernel", {}))
    kw.update(doc.get("grid", {}))
    sched = doc.get("schedule", {})
    for src, dst in (("t_max", "t_max"), ("max_step", "max_step")):
        if src in sched:
            kw[dst] = sched[src]
    if "snapshots" in sched:
        kw["snapshots"] = tuple(sched["snapshots"])
    fam = doc.get("families", {})
    for src, dst in (("q", "q_list"), ("alpha_gaps", "alpha_gaps"), ("eps", "eps_list"),
                     ("mollifiers", "mollifiers")):
        if src in fam:
            kw[dst] = tuple(fam[src])
    if "q_main" in fam:
        kw["q_main"] = fam["q_main"]
    if "sets" in doc:
        kw["sets"] = tuple(SetSpec(tuple(tuple(tuple(ax) for ax in box) for box in s["boxes"]), s["name"])
                           for s in doc["sets"])
    g = doc.get("gauge", {})
    for src, dst in (("t", "gauge_t"), ("q", "gauge_q"), ("levels", "gauge_levels")):
        if src in g:
            kw[dst] = g[src]
    if "q" in doc.get("tail", {}):
        kw["tail_q"] = tuple(doc["tail"]["q"])
    f = doc.get("formula", {})
    if "paths" in f:
        kw["formula_paths"] = f["paths"]
    if "cameron_martin_replicates" in f:
        kw["cm_replicates"] = f["cameron_martin_replicates"]
    s = doc.get("snapshot_output", {})
    if "format" in s:
        kw["snapshot_format"] = s["format"]
    if "replicates" in s:
        kw["simulate_replicates"] = s["replicates"]
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def load_manifest(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}") from None
