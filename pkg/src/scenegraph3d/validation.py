"""Input validation for the estimators."""

from __future__ import annotations

from typing import List, Sequence

from .data import EntityInput, SceneRecord
from .graph import SceneGraph


def check_entities(entities) -> List[EntityInput]:
    """Accept a record or a sequence of entities; validate each entity."""
    if isinstance(entities, SceneRecord):
        entities = entities.entities
    entities = list(entities)
    if not entities:
        raise ValueError("scene has no entities")
    ids = [e.id for e in entities]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate entity ids in {ids}")
    for e in entities:
        if not isinstance(e, EntityInput):
            raise TypeError(f"expected EntityInput, got {type(e).__name__}")
        e.validate()
    dims = {e.image_feat.shape for e in entities}
    if len(dims) != 1:
        raise ValueError(f"inconsistent image feature shapes {sorted(dims)}")
    return entities


def check_records(records) -> List[SceneRecord]:
    records = list(records)
    if not records:
        raise ValueError("no training records")
    for r in records:
        if not isinstance(r, SceneRecord):
            raise TypeError(f"expected SceneRecord, got {type(r).__name__}")
    return records


def check_vocab(graph: SceneGraph, objects: Sequence[str], predicates: Sequence[str],
                what: str = "graph") -> None:
    if list(graph.objects) != list(objects) or list(graph.predicates) != list(predicates):
        raise ValueError(f"{what} vocabulary does not match the model vocabulary")


def check_graph(graph) -> SceneGraph:
    if not isinstance(graph, SceneGraph):
        raise TypeError(f"expected SceneGraph, got {type(graph).__name__}")
    return graph
