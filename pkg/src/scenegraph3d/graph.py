"""Scene-graph data model and its JSON wire format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Obb

PHI_MAX = 100.0


class SchemaError(ValueError):
    """Raised when a scene graph (or record) does not match the schema."""


def normalize_probs(probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise SchemaError("class distribution must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise SchemaError("class distribution entries must be finite and >= 0")
    s = p.sum()
    if s <= 0:
        raise SchemaError("class distribution sums to zero")
    return p / s


def one_hot(index: int, size: int) -> np.ndarray:
    p = np.zeros(size)
    p[index] = 1.0
    return p


def argmax_lowest(p: Sequence[float]) -> int:
    """Argmax with ties broken toward the lowest index."""
    return int(np.argmax(np.asarray(p)))  # numpy returns the first maximum


@dataclass
class SceneGraphNode:
    id: int
    class_probs: np.ndarray
    obb: Obb
    feature: Optional[np.ndarray] = None
    phi: float = 1.0

    @property
    def label(self) -> int:
        return argmax_lowest(self.class_probs)


@dataclass
class SceneGraphEdge:
    src: int
    dst: int
    pred_probs: np.ndarray
    feature: Optional[np.ndarray] = None
    phi: float = 1.0

    @property
    def label(self) -> int:
        return argmax_lowest(self.pred_probs)


@dataclass
class SceneGraph:
    objects: List[str]
    predicates: List[str]
    nodes: Dict[int, SceneGraphNode] = field(default_factory=dict)
    edges: Dict[Tuple[int, int], SceneGraphEdge] = field(default_factory=dict)

    def add_node(self, node: SceneGraphNode) -> None:
        if node.id in self.nodes:
            raise SchemaError(f"duplicate node id {node.id}")
        if len(node.class_probs) != len(self.objects):
            raise SchemaError(
                f"node {node.id}: {len(node.class_probs)} class probs for "
                f"{len(self.objects)} object classes")
        if not 0.0 <= node.phi <= PHI_MAX:
            raise SchemaError(f"node {node.id}: phi {node.phi} outside [0, {PHI_MAX}]")
        self.nodes[node.id] = node

    def add_edge(self, edge: SceneGraphEdge) -> None:
        key = (edge.src, edge.dst)
        if edge.src == edge.dst:
            raise SchemaError(f"self edge on node {edge.src}")
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise SchemaError(f"edge {key} references a missing node")
        if key in self.edges:
            raise SchemaError(f"duplicate edge {key}")
        if len(edge.pred_probs) != len(self.predicates):
            raise SchemaError(
                f"edge {key}: {len(edge.pred_probs)} predicate probs for "
                f"{len(self.predicates)} predicates")
        if not 0.0 <= edge.phi <= PHI_MAX:
            raise SchemaError(f"edge {key}: phi {edge.phi} outside [0, {PHI_MAX}]")
        self.edges[key] = edge

    def node_ids(self) -> List[int]:
        return sorted(self.nodes)

    def edge_keys(self) -> List[Tuple[int, int]]:
        return sorted(self.edges)

    def class_name(self, node_id: int) -> str:
        return self.objects[self.nodes[node_id].label]

    def predicate_name(self, key: Tuple[int, int]) -> str:
        return self.predicates[self.edges[key].label]

    def triplets(self) -> List[Tuple[int, str, int]]:
        return [(s, self.predicate_name((s, o)), o) for s, o in self.edge_keys()]

    def copy(self) -> "SceneGraph":
        g = SceneGraph(list(self.objects), list(self.predicates))
        for nid in self.node_ids():
            n = self.nodes[nid]
            g.nodes[nid] = replace(
                n, class_probs=n.class_probs.copy(),
                feature=None if n.feature is None else n.feature.copy())
        for key in self.edge_keys():
            e = self.edges[key]
            g.edges[key] = replace(
                e, pred_probs=e.pred_probs.copy(),
                feature=None if e.feature is None else e.feature.copy())
        return g

    # -- JSON ---------------------------------------------------------------

    def to_dict(self, include_features: bool = False) -> dict:
        nodes = []
        for nid in self.node_ids():
            n = self.nodes[nid]
            d = {"id": nid, "class_probs": [float(v) for v in n.class_probs],
                 "obb": n.obb.to_dict(), "phi": float(n.phi)}
            if include_features and n.feature is not None:
                d["feature"] = [float(v) for v in n.feature]
            nodes.append(d)
        edges = []
        for key in self.edge_keys():
            e = self.edges[key]
            d = {"src": e.src, "dst": e.dst,
                 "pred_probs": [float(v) for v in e.pred_probs], "phi": float(e.phi)}
            if include_features and e.feature is not None:
                d["feature"] = [float(v) for v in e.feature]
            edges.append(d)
        return {"vocab": {"objects": list(self.objects), "predicates": list(self.predicates)},
                "nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        try:
            vocab = d["vocab"]
            g = cls(list(vocab["objects"]), list(vocab["predicates"]))
            for nd in d.get("nodes", []):
                g.add_node(SceneGraphNode(
                    id=int(nd["id"]),
                    class_probs=_read_dist(nd, "class_probs", "class", g.objects),
                    obb=Obb.from_dict(nd["obb"]),
                    feature=_read_vec(nd.get("feature")),
                    phi=float(nd.get("phi", 1.0)),
                ))
            for ed in d.get("edges", []):
                g.add_edge(SceneGraphEdge(
                    src=int(ed["src"]), dst=int(ed["dst"]),
                    pred_probs=_read_dist(ed, "pred_probs", "pred", g.predicates),
                    feature=_read_vec(ed.get("feature")),
                    phi=float(ed.get("phi", 1.0)),
                ))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed scene graph: {exc!r}") from exc
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(str(exc)) from exc
        return g

    def to_json(self, include_features: bool = False) -> str:
        return dumps(self.to_dict(include_features))

    @classmethod
    def from_json(cls, text: str) -> "SceneGraph":
        return cls.from_dict(json.loads(text))


def _read_dist(d: dict, probs_key: str, label_key: str, names: List[str]) -> np.ndarray:
    if probs_key in d:
        p = np.asarray(d[probs_key], dtype=np.float64)
        if p.shape != (len(names),):
            raise SchemaError(f"{probs_key} has length {p.size}, expected {len(names)}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise SchemaError(f"{probs_key} is not a valid distribution")
        return p
    name = d[label_key]
    if name not in names:
        raise SchemaError(f"unknown label {name!r}")
    return one_hot(names.index(name), len(names))


def _read_vec(v) -> Optional[np.ndarray]:
    return None if v is None else np.asarray(v, dtype=np.float64)


def dumps(obj) -> str:
    """Stable JSON encoding used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False,
                      ensure_ascii=False)


def graph_from_labels(objects: Sequence[str], predicates: Sequence[str],
                      nodes: Sequence[Tuple[int, str, Obb]],
                      triplets: Sequence[Tuple[int, str, int]]) -> SceneGraph:
    """Build a one-hot graph from (id, class, obb) nodes and (s, pred, o) triplets."""
    g = SceneGraph(list(objects), list(predicates))
    for nid, cls_name, obb in nodes:
        g.add_node(SceneGraphNode(nid, one_hot(g.objects.index(cls_name), len(g.objects)), obb))
    for s, p, o in triplets:
        g.add_edge(SceneGraphEdge(s, o, one_hot(g.predicates.index(p), len(g.predicates))))
    return g


def is_distribution(p: Sequence[float], tol: float = 1e-9) -> bool:
    p = np.asarray(p)
    return bool(np.all(np.isfinite(p)) and np.all(p >= 0) and math.isclose(p.sum(), 1.0, abs_tol=tol))
