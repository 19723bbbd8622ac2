"""Incremental fusion of local scene graphs into a global one.

Every stored attribute carries a confidence weight. A new observation with
weight ``phi_t`` is blended into the stored value with weight ``phi_prev``,
and the stored weight grows to ``min(phi_max, phi_t + phi_prev)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import Obb
from .graph import PHI_MAX, SceneGraph, SceneGraphEdge, SceneGraphNode

NEW = None  # correspondence target meaning "insert as a new global node"


def fuse_value(u_t, phi_t: float, u_prev, phi_prev: float, phi_max: float = PHI_MAX):
    """Confidence-weighted moving average; returns ``(u_fused, phi_fused)``."""
    if not phi_t > 0:
        raise ValueError(f"observation weight must be positive, got {phi_t}")
    if phi_prev < 0:
        raise ValueError(f"stored weight must be non-negative, got {phi_prev}")
    u_t = np.asarray(u_t, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_t.shape != u_prev.shape:
        raise ValueError(f"shape mismatch {u_t.shape} vs {u_prev.shape}")
    u = (u_t * phi_t + u_prev * phi_prev) / (phi_t + phi_prev)
    return u, min(phi_max, phi_t + phi_prev)


def fuse_yaw(yaw_t: float, phi_t: float, yaw_prev: float, phi_prev: float) -> float:
    s = phi_t * math.sin(yaw_t) + phi_prev * math.sin(yaw_prev)
    c = phi_t * math.cos(yaw_t) + phi_prev * math.cos(yaw_prev)
    if s == 0.0 and c == 0.0:
        return yaw_t
    return math.atan2(s, c)


def _renormalize(p: np.ndarray) -> np.ndarray:
    return p / p.sum()


@dataclass
class FusionState:
    global_graph: SceneGraph
    id_map: Dict[int, int] = field(default_factory=dict)
    phi_max: float = PHI_MAX


def _fuse_node(g: SceneGraphNode, n: SceneGraphNode, phi_max: float) -> SceneGraphNode:
    probs, phi = fuse_value(n.class_probs, n.phi, g.class_probs, g.phi, phi_max)
    centroid, _ = fuse_value(n.obb.centroid, n.phi, g.obb.centroid, g.phi, phi_max)
    dims, _ = fuse_value(n.obb.dims, n.phi, g.obb.dims, g.phi, phi_max)
    yaw = fuse_yaw(n.obb.yaw, n.phi, g.obb.yaw, g.phi)
    feature = g.feature
    if n.feature is not None and g.feature is not None:
        feature, _ = fuse_value(n.feature, n.phi, g.feature, g.phi, phi_max)
    elif n.feature is not None:
        feature = n.feature.copy()
    return SceneGraphNode(g.id, _renormalize(probs), Obb(tuple(centroid), tuple(dims), yaw),
                          feature, phi)


def _fuse_edge(g: SceneGraphEdge, e: SceneGraphEdge, phi_max: float) -> SceneGraphEdge:
    probs, phi = fuse_value(e.pred_probs, e.phi, g.pred_probs, g.phi, phi_max)
    feature = g.feature
    if e.feature is not None and g.feature is not None:
        feature, _ = fuse_value(e.feature, e.phi, g.feature, g.phi, phi_max)
    elif e.feature is not None:
        feature = e.feature.copy()
    return replace(g, pred_probs=_renormalize(probs), feature=feature, phi=phi)


def fuse_graph(state: FusionState, local: SceneGraph,
               correspondences: Optional[Mapping[int, Optional[int]]] = None) -> FusionState:
    """Fuse ``local`` into a copy of ``state`` and return the new state.

    ``correspondences`` maps each local node id to an existing global id or to
    ``None`` (new). Local ids without an entry fall back to ``state.id_map``,
    then to "new". New nodes keep their local id when it is free globally.
    """
    gg = state.global_graph
    if list(local.objects) != list(gg.objects) or list(local.predicates) != list(gg.predicates):
        raise ValueError("local graph vocabulary differs from the global graph")
    correspondences = dict(correspondences or {})
    out = gg.copy()
    id_map = dict(state.id_map)
    resolved: Dict[int, int] = {}
    for lid in local.node_ids():
        target = correspondences.get(lid, id_map.get(lid, NEW))
        if target is not NEW and target not in out.nodes:
            raise KeyError(f"correspondence {lid} -> {target}: no such global node")
        node = local.nodes[lid]
        if target is NEW:
            target = lid if lid not in out.nodes else max(out.nodes) + 1
            out.add_node(replace(node, id=target, class_probs=node.class_probs.copy(),
                                 feature=None if node.feature is None else node.feature.copy()))
        else:
            out.nodes[target] = _fuse_node(out.nodes[target], node, state.phi_max)
        resolved[lid] = target
        id_map[lid] = target
    for (ls, lo) in local.edge_keys():
        e = local.edges[(ls, lo)]
        key = (resolved[ls], resolved[lo])
        if key in out.edges:
            out.edges[key] = _fuse_edge(out.edges[key], e, state.phi_max)
        else:
            out.add_edge(replace(e, src=key[0], dst=key[1], pred_probs=e.pred_probs.copy(),
                                 feature=None if e.feature is None else e.feature.copy()))
    return FusionState(out, id_map, state.phi_max)


class SceneGraphFuser(BaseEstimator):
    """Accumulates local graphs into ``global_graph_`` via ``partial_fit``."""

    def __init__(self, phi_max: float = PHI_MAX):
        self.phi_max = phi_max

    def partial_fit(self, local: SceneGraph, correspondences=None) -> "SceneGraphFuser":
        if not hasattr(self, "state_"):
            self.state_ = FusionState(SceneGraph(list(local.objects), list(local.predicates)),
                                      phi_max=self.phi_max)
        self.state_ = fuse_graph(self.state_, local, correspondences)
        self.n_updates_ = getattr(self, "n_updates_", 0) + 1
        return self

    def fit(self, graphs, correspondences=None) -> "SceneGraphFuser":
        for attr in ("state_", "n_updates_"):
            if hasattr(self, attr):
                delattr(self, attr)
        corr = correspondences or [None] * len(graphs)
        for g, c in zip(graphs, corr):
            self.partial_fit(g, c)
        return self

    @property
    def global_graph_(self) -> SceneGraph:
        return self.state_.global_graph
