"""Scene-graph prediction recall and layout constraint accuracy.

Relation geometry (world frame, +x right, +y front, +z up):

* ``left(i, j)``: centroid x of i < centroid x of j; ``right`` mirrors it.
* ``behind(i, j)``: centroid y of i < centroid y of j; ``front`` mirrors it.
* ``smaller(i, j)``: volume(i) < volume(j); ``larger`` mirrors it.
* ``shorter(i, j)``: top(i) < top(j); ``taller`` mirrors it.
* ``close_by(i, j)``: surface distance <= ``close_by`` threshold.
* ``symmetrical(i, j)``: same class, per-axis dims ratio within the ratio
  tolerance, and the mirror image of i across the plane bisecting the
  centroid segment matches j's yaw modulo pi within the yaw tolerance.

Exact ties make both mirrored relations false.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .geometry import Obb, obb_distance
from .graph import SceneGraph, argmax_lowest

RELATIONS = ("left", "right", "front", "behind", "smaller", "larger", "taller",
             "shorter", "close_by", "symmetrical")
EASY_RELATIONS = RELATIONS[:8]
HARD_RELATIONS = RELATIONS[8:]
MIRROR = {"left": "right", "right": "left", "front": "behind", "behind": "front",
          "smaller": "larger", "larger": "smaller", "taller": "shorter", "shorter": "taller",
          "close_by": "close_by", "symmetrical": "symmetrical"}


@dataclass(frozen=True)
class RelationParams:
    close_by: float = 0.45
    sym_ratio: float = 1.1
    sym_yaw_tol: float = 0.45


DEFAULT_PARAMS = RelationParams()


class UnsupportedPredicate(ValueError):
    pass


def wrap_half_pi(angle: float) -> float:
    """Map an angle to [-pi/2, pi/2), i.e. compare directions modulo pi."""
    return (angle + 0.5 * math.pi) % math.pi - 0.5 * math.pi


def is_symmetrical(a: Obb, b: Obb, same_class: bool, params: RelationParams = DEFAULT_PARAMS) -> bool:
    if not same_class:
        return False
    for da, db in zip(a.dims, b.dims):
        r = da / db
        if not (1.0 / params.sym_ratio <= r <= params.sym_ratio):
            return False
    dx = b.centroid[0] - a.centroid[0]
    dy = b.centroid[1] - a.centroid[1]
    if dx == 0.0 and dy == 0.0:
        return False
    # Reflecting a heading t across a vertical plane whose normal points along
    # angle beta gives 2*beta + pi - t; modulo pi that is 2*beta - t.
    beta = math.atan2(dy, dx)
    reflected = 2.0 * beta - a.yaw
    return abs(wrap_half_pi(reflected - b.yaw)) <= params.sym_yaw_tol


def relation_holds(rel: str, a: Obb, b: Obb, cls_a: int = -1, cls_b: int = -2,
                   params: RelationParams = DEFAULT_PARAMS) -> bool:
    if rel == "left":
        return a.centroid[0] < b.centroid[0]
    if rel == "right":
        return a.centroid[0] > b.centroid[0]
    if rel == "behind":
        return a.centroid[1] < b.centroid[1]
    if rel == "front":
        return a.centroid[1] > b.centroid[1]
    if rel == "smaller":
        return a.volume < b.volume
    if rel == "larger":
        return a.volume > b.volume
    if rel == "shorter":
        return a.top < b.top
    if rel == "taller":
        return a.top > b.top
    if rel == "close_by":
        return obb_distance(a, b) <= params.close_by
    if rel == "symmetrical":
        return is_symmetrical(a, b, cls_a == cls_b, params)
    raise UnsupportedPredicate(f"unsupported predicate {rel!r}")


def relation_margin(rel: str, a: Obb, b: Obb) -> float:
    """How decisively an easy relation holds, in meters."""
    if rel in ("left", "right"):
        return abs(a.centroid[0] - b.centroid[0])
    if rel in ("front", "behind"):
        return abs(a.centroid[1] - b.centroid[1])
    if rel in ("smaller", "larger"):
        return abs(a.volume ** (1 / 3) - b.volume ** (1 / 3))
    if rel in ("taller", "shorter"):
        return abs(a.top - b.top)
    return math.inf


def holding_relations(a: Obb, b: Obb, cls_a: int, cls_b: int, relations: Sequence[str] = RELATIONS,
                      params: RelationParams = DEFAULT_PARAMS) -> List[str]:
    return [r for r in relations if relation_holds(r, a, b, cls_a, cls_b, params)]


def select_pair_relation(a: Obb, b: Obb, cls_a: int, cls_b: int,
                         relations: Sequence[str] = RELATIONS,
                         params: RelationParams = DEFAULT_PARAMS) -> Optional[str]:
    """Single most specific holding relation for an ordered pair.

    symmetrical beats close_by beats every easy relation; among easy
    relations the one with the largest margin wins (ties: vocabulary order).
    """
    holding = holding_relations(a, b, cls_a, cls_b, relations, params)
    for hard in ("symmetrical", "close_by"):
        if hard in holding:
            return hard
    if not holding:
        return None
    return max(holding, key=lambda r: (relation_margin(r, a, b), -holding.index(r)))


def annotate_gt_predicates(obbs: Mapping[int, Obb], classes: Mapping[int, int],
                           relations: Sequence[str] = RELATIONS,
                           params: RelationParams = DEFAULT_PARAMS,
                           max_per_pair: Optional[int] = None,
                           pairs: Optional[Sequence[Tuple[int, int]]] = None
                           ) -> List[Tuple[int, str, int]]:
    """Ground-truth triplets for every ordered pair (or the given pairs).

    With ``max_per_pair=None`` every holding relation is emitted. With
    ``max_per_pair=1`` only :func:`select_pair_relation`'s choice is kept;
    larger caps keep the chosen relation followed by the rest in vocabulary
    order.
    """
    if len(obbs) < 2:
        raise ValueError("annotation needs at least two nodes")
    ids = sorted(obbs)
    if pairs is None:
        pairs = [(i, j) for i in ids for j in ids if i != j]
    out = []
    for i, j in pairs:
        holding = holding_relations(obbs[i], obbs[j], classes[i], classes[j], relations, params)
        if max_per_pair is not None:
            first = select_pair_relation(obbs[i], obbs[j], classes[i], classes[j], relations, params)
            ordered = ([first] if first else []) + [r for r in holding if r != first]
            holding = ordered[:max_per_pair]
        out.extend((i, r, j) for r in holding)
    return out


# -- constraint accuracy ------------------------------------------------------


@dataclass
class ConstraintReport:
    satisfied: Dict[str, int] = field(default_factory=lambda: {r: 0 for r in RELATIONS})
    total: Dict[str, int] = field(default_factory=lambda: {r: 0 for r in RELATIONS})

    def accuracy(self, rel: str) -> Optional[float]:
        return self.satisfied[rel] / self.total[rel] if self.total[rel] else None

    @property
    def per_relation(self) -> Dict[str, Optional[float]]:
        return {r: self.accuracy(r) for r in RELATIONS}

    def _mean(self, rels) -> Optional[float]:
        vals = [self.accuracy(r) for r in rels if self.total[r]]
        return float(np.mean(vals)) if vals else None

    @property
    def total_accuracy(self) -> Optional[float]:
        return self._mean(RELATIONS)

    @property
    def easy_accuracy(self) -> Optional[float]:
        return self._mean(EASY_RELATIONS)

    @property
    def hard_accuracy(self) -> Optional[float]:
        return self._mean(HARD_RELATIONS)

    def __add__(self, other: "ConstraintReport") -> "ConstraintReport":
        return ConstraintReport({r: self.satisfied[r] + other.satisfied[r] for r in RELATIONS},
                                {r: self.total[r] + other.total[r] for r in RELATIONS})

    def to_dict(self) -> dict:
        return {"per_relation": self.per_relation, "counts": dict(self.total),
                "easy": self.easy_accuracy, "hard": self.hard_accuracy,
                "total": self.total_accuracy}

    def table(self) -> str:
        head = "".join(f"{r:>12}" for r in RELATIONS) + f"{'easy':>8}{'hard':>8}{'total':>8}"
        cells = "".join(f"{_fmt(self.accuracy(r)):>12}" for r in RELATIONS)
        cells += "".join(f"{_fmt(v):>8}" for v in (self.easy_accuracy, self.hard_accuracy,
                                                   self.total_accuracy))
        return head + "\n" + cells


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.3f}"


def check_triplets(obbs: Mapping[int, Obb], classes: Mapping[int, int],
                   triplets: Sequence[Tuple[int, str, int]],
                   params: RelationParams = DEFAULT_PARAMS) -> ConstraintReport:
    report = ConstraintReport()
    for s, rel, o in triplets:
        if rel not in RELATIONS:
            raise UnsupportedPredicate(f"unsupported predicate {rel!r}")
        report.total[rel] += 1
        if relation_holds(rel, obbs[s], obbs[o], classes[s], classes[o], params):
            report.satisfied[rel] += 1
    return report


def eval_constraints(obbs: Mapping[int, Obb], graph: SceneGraph,
                     params: RelationParams = DEFAULT_PARAMS) -> ConstraintReport:
    """Check every (subject, predicate, object) edge of ``graph`` on ``obbs``.

    Node classes (for ``symmetrical``) come from the graph's argmax labels.
    """
    classes = {nid: graph.nodes[nid].label for nid in graph.node_ids()}
    return check_triplets(obbs, classes, graph.triplets(), params)


# -- recall -------------------------------------------------------------------


@dataclass
class RecallReport:
    object_names: List[str]
    predicate_names: List[str]
    obj_hits: np.ndarray
    obj_total: np.ndarray
    pred_hits: np.ndarray
    pred_total: np.ndarray
    rel_hits: int = 0
    rel_total: int = 0

    @classmethod
    def empty(cls, objects: Sequence[str], predicates: Sequence[str]) -> "RecallReport":
        z = lambda n: np.zeros(n, dtype=np.int64)  # noqa: E731
        return cls(list(objects), list(predicates), z(len(objects)), z(len(objects)),
                   z(len(predicates)), z(len(predicates)))

    @staticmethod
    def _ratio(h, t) -> float:
        return float(h) / float(t) if t else 0.0

    @staticmethod
    def _mean_recall(hits, total) -> float:
        present = total > 0
        return float(np.mean(hits[present] / total[present])) if present.any() else 0.0

    @property
    def recall_obj(self) -> float:
        return self._ratio(self.obj_hits.sum(), self.obj_total.sum())

    @property
    def recall_pred(self) -> float:
        return self._ratio(self.pred_hits.sum(), self.pred_total.sum())

    @property
    def recall_rel(self) -> float:
        return self._ratio(self.rel_hits, self.rel_total)

    @property
    def mrecall_obj(self) -> float:
        return self._mean_recall(self.obj_hits, self.obj_total)

    @property
    def mrecall_pred(self) -> float:
        return self._mean_recall(self.pred_hits, self.pred_total)

    def __add__(self, other: "RecallReport") -> "RecallReport":
        return RecallReport(self.object_names, self.predicate_names,
                            self.obj_hits + other.obj_hits, self.obj_total + other.obj_total,
                            self.pred_hits + other.pred_hits, self.pred_total + other.pred_total,
                            self.rel_hits + other.rel_hits, self.rel_total + other.rel_total)

    def to_dict(self) -> dict:
        per_obj = {n: (self._ratio(h, t) if t else None)
                   for n, h, t in zip(self.object_names, self.obj_hits, self.obj_total)}
        per_pred = {n: (self._ratio(h, t) if t else None)
                    for n, h, t in zip(self.predicate_names, self.pred_hits, self.pred_total)}
        return {"recall_rel": self.recall_rel, "recall_obj": self.recall_obj,
                "recall_pred": self.recall_pred, "mrecall_obj": self.mrecall_obj,
                "mrecall_pred": self.mrecall_pred,
                "per_class": {"objects": per_obj, "predicates": per_pred}}

    def table(self) -> str:
        cols = ("Rel", "Obj", "Pred", "mObj", "mPred")
        vals = (self.recall_rel, self.recall_obj, self.recall_pred, self.mrecall_obj,
                self.mrecall_pred)
        return ("".join(f"{c:>8}" for c in cols) + "\n"
                + "".join(f"{100 * v:>8.1f}" for v in vals))


def top1_triplet(p_subj: np.ndarray, p_pred: np.ndarray, p_obj: np.ndarray) -> Tuple[int, int, int]:
    """Highest-scoring (subject, predicate, object) labels under the product score.

    The product of independent factors is maximized by maximizing each factor;
    first-maximum argmax reproduces lexicographic tie-breaking.
    """
    return argmax_lowest(p_subj), argmax_lowest(p_pred), argmax_lowest(p_obj)


def recall(pred: SceneGraph, gt: SceneGraph,
           correspondences: Optional[Mapping[int, Optional[int]]] = None) -> RecallReport:
    """Top-1 recall of ``pred`` against ``gt``.

    ``correspondences`` maps GT node id to predicted node id (or None);
    default is identity on shared ids.
    """
    if list(pred.objects) != list(gt.objects) or list(pred.predicates) != list(gt.predicates):
        raise ValueError("prediction and ground truth use different vocabularies")
    if correspondences is None:
        correspondences = {nid: (nid if nid in pred.nodes else None) for nid in gt.nodes}
    targets = [m for m in correspondences.values() if m is not None]
    if len(targets) != len(set(targets)):
        raise ValueError("correspondences map several GT nodes to one predicted node")
    rep = RecallReport.empty(gt.objects, gt.predicates)
    for nid in gt.node_ids():
        c = gt.nodes[nid].label
        rep.obj_total[c] += 1
        m = correspondences.get(nid)
        if m is not None and pred.nodes[m].label == c:
            rep.obj_hits[c] += 1
    for s, o in gt.edge_keys():
        p = gt.edges[(s, o)].label
        rep.pred_total[p] += 1
        rep.rel_total += 1
        ms, mo = correspondences.get(s), correspondences.get(o)
        edge = pred.edges.get((ms, mo)) if ms is not None and mo is not None else None
        if edge is None:
            continue
        if edge.label == p:
            rep.pred_hits[p] += 1
        guess = top1_triplet(pred.nodes[ms].class_probs, edge.pred_probs, pred.nodes[mo].class_probs)
        if guess == (gt.nodes[s].label, p, gt.nodes[o].label):
            rep.rel_hits += 1
    return rep
