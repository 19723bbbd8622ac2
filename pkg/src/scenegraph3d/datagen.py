"""Synthetic indoor scenes with geometric ground-truth scene graphs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULTS, split_fractions
from .data import EntityInput, SceneRecord
from .geometry import Obb, neighbor_graph, obb_overlap
from .graph import SceneGraph, SceneGraphEdge, SceneGraphNode, one_hot
from .metrics import RelationParams, annotate_gt_predicates
from .shapes import ShapeCatalog

log = logging.getLogger(__name__)

# nominal (width, depth, height) in meters
CLASS_SIZES = {
    "table": (1.2, 0.8, 0.75), "chair": (0.5, 0.5, 0.9), "sofa": (2.0, 0.9, 0.85),
    "bed": (2.0, 1.6, 0.6), "cabinet": (1.0, 0.5, 1.2), "lamp": (0.4, 0.4, 1.6),
    "desk": (1.4, 0.7, 0.75), "shelf": (1.0, 0.35, 1.8), "tv_stand": (1.6, 0.45, 0.55),
    "nightstand": (0.5, 0.45, 0.55), "wardrobe": (1.5, 0.6, 2.1), "plant": (0.45, 0.45, 1.0),
}
MAX_TRIES = 10_000
YAW_STEP = math.radians(15.0)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = DEFAULTS["seed"]
    num_scenes: int = DEFAULTS["synth.num_scenes"]
    min_objects: int = DEFAULTS["synth.min_objects"]
    max_objects: int = DEFAULTS["synth.max_objects"]
    room: Tuple[float, float] = DEFAULTS["synth.room"]
    objects: Tuple[str, ...] = DEFAULTS["synth.objects"]
    predicates: Tuple[str, ...] = DEFAULTS["synth.predicates"]
    image_dim: int = DEFAULTS["synth.image_dim"]
    image_noise: float = DEFAULTS["synth.image_noise"]
    points: int = DEFAULTS["synth.points"]
    point_noise: float = DEFAULTS["synth.point_noise"]
    split: Tuple[float, float] = DEFAULTS["synth.split"]
    anchor_prob: float = DEFAULTS["synth.anchor_prob"]
    twin_prob: float = DEFAULTS["synth.twin_prob"]
    yaw_jitter_deg: float = DEFAULTS["synth.yaw_jitter_deg"]
    shape_noise: float = DEFAULTS["synth.shape_noise"]
    margin: float = DEFAULTS["graph.margin"]
    relations: RelationParams = RelationParams()
    catalog_seed: int = DEFAULTS["catalog.seed"]
    catalog_per_class: int = DEFAULTS["catalog.per_class"]

    def __post_init__(self):
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise ValueError("object count range must satisfy 1 <= min <= max")
        if self.num_scenes < 1 or self.points < 8:
            raise ValueError("need >= 1 scene and >= 8 points per entity")
        split_fractions({"synth.split": self.split})

    @classmethod
    def from_config(cls, cfg: Mapping) -> "SynthConfig":
        return cls(
            seed=cfg["seed"], num_scenes=cfg["synth.num_scenes"],
            min_objects=cfg["synth.min_objects"], max_objects=cfg["synth.max_objects"],
            room=tuple(cfg["synth.room"]), objects=tuple(cfg["synth.objects"]),
            predicates=tuple(cfg["synth.predicates"]), image_dim=cfg["synth.image_dim"],
            image_noise=cfg["synth.image_noise"], points=cfg["synth.points"],
            point_noise=cfg["synth.point_noise"], split=tuple(cfg["synth.split"]),
            anchor_prob=cfg["synth.anchor_prob"], twin_prob=cfg["synth.twin_prob"],
            yaw_jitter_deg=cfg["synth.yaw_jitter_deg"], shape_noise=cfg["synth.shape_noise"],
            margin=cfg["graph.margin"],
            relations=RelationParams(cfg["relations.close_by"], cfg["relations.sym_ratio"],
                                     cfg["relations.sym_yaw_tol"]),
            catalog_seed=cfg["catalog.seed"], catalog_per_class=cfg["catalog.per_class"])

    def catalog(self) -> ShapeCatalog:
        return ShapeCatalog.default(self.objects, self.catalog_seed, self.catalog_per_class)


def class_prototypes(config: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0xC1A55])
    return rng.standard_normal((len(config.objects), config.image_dim))


def _footprint_radius(obb: Obb, direction: float) -> float:
    """Half extent of the box footprint along a ground-plane direction."""
    rel = direction - obb.yaw
    return 0.5 * (abs(obb.dims[0] * math.cos(rel)) + abs(obb.dims[1] * math.sin(rel)))


def _inside_room(obb: Obb, room: Sequence[float]) -> bool:
    r_x = _footprint_radius(obb, 0.0)
    r_y = _footprint_radius(obb, 0.5 * math.pi)
    x, y, _ = obb.centroid
    return r_x <= x <= room[0] - r_x and r_y <= y <= room[1] - r_y


def _sample_yaw(rng: np.random.Generator, jitter_deg: float) -> float:
    k = int(rng.choice([0, 6, 12, 18])) if rng.random() < 0.7 else int(rng.integers(24))
    return k * YAW_STEP + math.radians(rng.uniform(-jitter_deg, jitter_deg))


def _propose(rng, config: SynthConfig, cls_name: str, placed: List[Tuple[str, Obb]]) -> Tuple[str, Obb]:
    room = config.room
    if placed and rng.random() < config.twin_prob:
        anchor_cls, anchor = placed[int(rng.integers(len(placed)))]
        beta = int(rng.integers(4)) * 0.5 * math.pi
        sep = 2 * _footprint_radius(anchor, beta) + rng.uniform(0.1, 0.6)
        c = (anchor.centroid[0] + sep * math.cos(beta), anchor.centroid[1] + sep * math.sin(beta),
             anchor.centroid[2])
        # mirror image of the anchor across the bisecting plane
        return anchor_cls, Obb(c, anchor.dims, 2 * beta - anchor.yaw + math.pi)
    base = CLASS_SIZES.get(cls_name, (0.8, 0.8, 0.8))
    dims = tuple(b * rng.uniform(0.92, 1.08) for b in base)
    yaw = _sample_yaw(rng, config.yaw_jitter_deg)
    probe = Obb((0.0, 0.0, dims[2] / 2), dims, yaw)
    if placed and rng.random() < config.anchor_prob:
        _, anchor = placed[int(rng.integers(len(placed)))]
        beta = rng.uniform(0, 2 * math.pi)
        sep = (_footprint_radius(anchor, beta) + _footprint_radius(probe, beta)
               + rng.uniform(0.02, 0.6))
        c = (anchor.centroid[0] + sep * math.cos(beta), anchor.centroid[1] + sep * math.sin(beta))
    else:
        c = (rng.uniform(0, room[0]), rng.uniform(0, room[1]))
    return cls_name, Obb((c[0], c[1], dims[2] / 2), dims, yaw)


def _sample_surface(rng, obb: Obb, n: int, noise: float) -> np.ndarray:
    w, d, h = obb.dims
    areas = np.array([w * d, w * d, w * h, w * h, d * h, d * h])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    local = np.empty((n, 3))
    for k in range(n):
        f, (u, v) = faces[k], uv[k]
        sign = 0.5 if f % 2 == 0 else -0.5
        if f < 2:
            local[k] = (u * w, v * d, sign * h)
        elif f < 4:
            local[k] = (u * w, sign * d, v * h)
        else:
            local[k] = (sign * w, u * d, v * h)
    local += np.clip(rng.normal(0.0, noise, size=local.shape), -0.1, 0.1)
    c, s = math.cos(obb.yaw), math.sin(obb.yaw)
    world = np.stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1],
                      local[:, 2]], axis=1)
    return world + np.asarray(obb.centroid)


def gt_graph(objects: Sequence[str], predicates: Sequence[str], ids: Sequence[int],
             classes: Sequence[str], obbs: Sequence[Obb], margin: float,
             params: RelationParams) -> SceneGraph:
    """One-hot graph over neighbor pairs, one most-specific predicate per edge."""
    g = SceneGraph(list(objects), list(predicates))
    for nid, cname, obb in zip(ids, classes, obbs):
        g.add_node(SceneGraphNode(nid, one_hot(g.objects.index(cname), len(g.objects)), obb))
    if len(ids) < 2:
        return g
    pairs = neighbor_graph(list(obbs), list(ids), margin)
    obb_map = dict(zip(ids, obbs))
    cls_map = {nid: g.objects.index(c) for nid, c in zip(ids, classes)}
    for s, rel, o in annotate_gt_predicates(obb_map, cls_map, predicates, params,
                                            max_per_pair=1, pairs=pairs):
        g.add_edge(SceneGraphEdge(s, o, one_hot(g.predicates.index(rel), len(g.predicates))))
    return g


def synth_scene(config: SynthConfig, index: int, prototypes: np.ndarray,
                catalog: ShapeCatalog) -> Optional[SceneRecord]:
    rng = np.random.default_rng([config.seed, index])
    n = int(rng.integers(config.min_objects, config.max_objects + 1))
    placed: List[Tuple[str, Obb]] = []
    for _ in range(n):
        cls_name = config.objects[int(rng.integers(len(config.objects)))]
        for _ in range(MAX_TRIES):
            cand_cls, cand = _propose(rng, config, cls_name, placed)
            if _inside_room(cand, config.room) and not any(obb_overlap(cand, o) for _, o in placed):
                placed.append((cand_cls, cand))
                break
        else:
            log.warning("scene %d: could not place object %d after %d tries; skipping scene",
                        index, len(placed), MAX_TRIES)
            return None
    ids = list(range(len(placed)))
    entities, codes = [], {}
    for nid, (cname, obb) in zip(ids, placed):
        c = config.objects.index(cname)
        feat = prototypes[c] + config.image_noise * rng.standard_normal(config.image_dim)
        pts = _sample_surface(rng, obb, config.points, config.point_noise)
        entities.append(EntityInput(nid, feat, pts, obb, cname))
        entry = catalog.class_entries(cname)[int(rng.integers(len(catalog.class_entries(cname))))]
        code = catalog.entries[entry].code.copy()
        if config.shape_noise > 0:
            code = code + config.shape_noise * rng.standard_normal(code.shape)
        codes[nid] = code
    graph = gt_graph(config.objects, config.predicates, ids, [p[0] for p in placed],
                     [p[1] for p in placed], config.margin, config.relations)
    return SceneRecord(f"scene_{index:05d}", entities, graph, codes)


def synth_dataset(config: SynthConfig) -> List[SceneRecord]:
    prototypes = class_prototypes(config)
    catalog = config.catalog()
    records = []
    for k in range(config.num_scenes):
        rec = synth_scene(config, k, prototypes, catalog)
        if rec is not None:
            records.append(rec)
    return records


def split_records(records: Sequence[SceneRecord], config: SynthConfig):
    """Seed-stable disjoint (train, val) split."""
    rng = np.random.default_rng([config.seed, 0x5917])
    order = rng.permutation(len(records))
    n_train = int(round(config.split[0] * len(records)))
    train = [records[i] for i in sorted(order[:n_train])]
    val = [records[i] for i in sorted(order[n_train:])]
    return train, val


def observe(record: SceneRecord, config: SynthConfig, timesteps: int, visibility: float,
            jitter: float, seed: int) -> List[dict]:
    """Noisy partial re-observations of a scene, one frame per timestep.

    Every entity is visible in at least one frame; image features and points
    are re-noised per frame and boxes get small centroid jitter.
    """
    rng = np.random.default_rng([seed, 0x0B5])
    prototypes = class_prototypes(config)
    n = len(record.entities)
    seen = rng.random((timesteps, n)) < visibility
    for k in range(n):
        if not seen[:, k].any():
            seen[int(rng.integers(timesteps)), k] = True
    frames = []
    for t in range(timesteps):
        ents = []
        for k, e in enumerate(record.entities):
            if not seen[t, k]:
                continue
            c = config.objects.index(e.gt_class)
            feat = prototypes[c] + config.image_noise * rng.standard_normal(config.image_dim)
            shift = np.clip(rng.normal(0.0, jitter, 3), -0.05, 0.05)
            shift[2] = 0.0
            obb = e.obb.translated(shift)
            pts = _sample_surface(rng, obb, config.points, config.point_noise)
            ents.append(EntityInput(e.id, feat, pts, obb))
        if ents:
            frames.append({"t": t, "entities": ents})
    return frames
