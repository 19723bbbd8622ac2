"""Entity inputs, scene records and the dataset JSONL format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import jsonschema
import numpy as np

from .geometry import Obb
from .graph import SceneGraph, SchemaError, dumps

MIN_POINTS = 8
POINT_SLACK = 0.2

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_OBB = {"type": "object", "required": ["centroid", "dims", "yaw"],
        "properties": {"centroid": _VEC3, "dims": _VEC3, "yaw": {"type": "number"}}}
ENTITY_SCHEMA = {
    "type": "object",
    "required": ["id", "image_feat", "points", "obb"],
    "properties": {
        "id": {"type": "integer"},
        "class": {"type": "string"},
        "image_feat": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "points": {"type": "array", "items": _VEC3, "minItems": MIN_POINTS},
        "obb": _OBB,
    },
}
RECORD_SCHEMA = {
    "type": "object",
    "required": ["scene_id", "entities", "graph", "shape_codes"],
    "properties": {
        "scene_id": {"type": "string"},
        "entities": {"type": "array", "items": ENTITY_SCHEMA, "minItems": 1},
        "graph": {"type": "object", "required": ["vocab", "nodes", "edges"]},
        "shape_codes": {"type": "object",
                        "additionalProperties": {"type": "array", "items": {"type": "number"}}},
    },
}
FRAME_SCHEMA = {
    "type": "object",
    "required": ["t", "entities"],
    "properties": {"t": {"type": "integer"},
                   "entities": {"type": "array", "items": ENTITY_SCHEMA, "minItems": 1}},
}


class DatasetError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class EntityInput:
    id: int
    image_feat: np.ndarray
    points: np.ndarray
    obb: Obb
    gt_class: Optional[str] = None

    def __post_init__(self):
        self.image_feat = np.asarray(self.image_feat, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def validate(self) -> None:
        if len(self.points) < MIN_POINTS:
            raise ValueError(f"entity {self.id}: {len(self.points)} points, need >= {MIN_POINTS}")
        if not np.all(np.isfinite(self.points)) or not np.all(np.isfinite(self.image_feat)):
            raise ValueError(f"entity {self.id}: non-finite inputs")
        # containment in the inflated box, tested in the box frame
        c = np.cos(self.obb.yaw)
        s = np.sin(self.obb.yaw)
        d = self.points - np.asarray(self.obb.centroid)
        local = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], 1)
        half = 0.5 * np.asarray(self.obb.dims) + POINT_SLACK + 1e-9
        if np.any(np.abs(local) > half):
            raise ValueError(f"entity {self.id}: points outside the box inflated by {POINT_SLACK} m")

    def to_dict(self) -> dict:
        d = {"id": self.id, "image_feat": [float(v) for v in self.image_feat],
             "points": [[float(v) for v in p] for p in self.points], "obb": self.obb.to_dict()}
        if self.gt_class is not None:
            d["class"] = self.gt_class
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EntityInput":
        return cls(int(d["id"]), d["image_feat"], d["points"], Obb.from_dict(d["obb"]),
                   d.get("class"))


@dataclass
class SceneRecord:
    scene_id: str
    entities: List[EntityInput]
    graph: SceneGraph
    shape_codes: Dict[int, np.ndarray]

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "entities": [e.to_dict() for e in self.entities],
                "graph": self.graph.to_dict(),
                "shape_codes": {str(k): [float(v) for v in self.shape_codes[k]]
                                for k in sorted(self.shape_codes)}}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecord":
        return cls(d["scene_id"], [EntityInput.from_dict(e) for e in d["entities"]],
                   SceneGraph.from_dict(d["graph"]),
                   {int(k): np.asarray(v, dtype=np.float64) for k, v in d["shape_codes"].items()})


def _validate(obj, schema, lineno):
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise DatasetError(f"{exc.message} at /{path}", lineno) from None


def parse_record(line: str, lineno: Optional[int] = None) -> SceneRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON ({exc.msg})", lineno) from None
    _validate(obj, RECORD_SCHEMA, lineno)
    try:
        rec = SceneRecord.from_dict(obj)
        for e in rec.entities:
            e.validate()
    except (SchemaError, ValueError, KeyError) as exc:
        raise DatasetError(str(exc), lineno) from None
    missing = [e.id for e in rec.entities if e.id not in rec.graph.nodes]
    if missing:
        raise DatasetError(f"entities {missing} have no graph node", lineno)
    return rec


def read_dataset(path) -> List[SceneRecord]:
    with open(path, encoding="utf-8") as fh:
        return [parse_record(line, k) for k, line in enumerate(fh, 1) if line.strip()]


def dataset_lines(records) -> str:
    return "".join(dumps(r.to_dict()) + "\n" for r in records)


def iter_frames(path) -> Iterator[dict]:
    """Per-timestep entity observations: ``{"t": int, "entities": [...]}`` lines."""
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", k) from None
            _validate(obj, FRAME_SCHEMA, k)
            try:
                ents = [EntityInput.from_dict(e) for e in obj["entities"]]
                for e in ents:
                    e.validate()
            except ValueError as exc:
                raise DatasetError(str(exc), k) from None
            yield {"t": obj["t"], "entities": ents}
