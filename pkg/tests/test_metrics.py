import itertools
import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from scenegraph3d.geometry import Obb
from scenegraph3d.graph import SceneGraph, SceneGraphEdge, SceneGraphNode, graph_from_labels, one_hot
from scenegraph3d.metrics import (MIRROR, RELATIONS, ConstraintReport, RelationParams,
                                 UnsupportedPredicate, annotate_gt_predicates, check_triplets,
                                 eval_constraints, recall, relation_holds, top1_triplet)

OBJ = ["chair", "table", "lamp"]


# -- independent brute-force reimplementation -------------------------------------------

def _corners2d(o):
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    w, d = o.dims[0] / 2, o.dims[1] / 2
    return [(o.centroid[0] + c * x - s * y, o.centroid[1] + s * x + c * y)
            for x, y in ((-w, -d), (w, -d), (w, d), (-w, d))]


def oracle_distance(a, b):
    plane = Polygon(_corners2d(a)).distance(Polygon(_corners2d(b)))
    za = (a.centroid[2] - a.dims[2] / 2, a.centroid[2] + a.dims[2] / 2)
    zb = (b.centroid[2] - b.dims[2] / 2, b.centroid[2] + b.dims[2] / 2)
    vert = max(0.0, zb[0] - za[1], za[0] - zb[1])
    return math.sqrt(plane ** 2 + vert ** 2)


def oracle_symmetrical(a, b, ca, cb, ratio=1.1, tol=0.45):
    if ca != cb:
        return False
    if any(not (1 / ratio <= x / y <= ratio) for x, y in zip(a.dims, b.dims)):
        return False
    n = np.array([b.centroid[0] - a.centroid[0], b.centroid[1] - a.centroid[1]])
    if not n.any():
        return False
    n = n / np.linalg.norm(n)
    v = np.array([math.cos(a.yaw), math.sin(a.yaw)])
    r = v - 2 * np.dot(v, n) * n  # heading of a reflected across the bisecting plane
    w = np.array([math.cos(b.yaw), math.sin(b.yaw)])
    diff = math.atan2(r[0] * w[1] - r[1] * w[0], float(np.dot(r, w)))
    if diff > math.pi / 2:
        diff -= math.pi
    elif diff < -math.pi / 2:
        diff += math.pi
    return abs(diff) <= tol


def oracle_holds(rel, a, b, ca, cb):
    vol = lambda o: o.dims[0] * o.dims[1] * o.dims[2]  # noqa: E731
    top = lambda o: o.centroid[2] + o.dims[2] / 2  # noqa: E731
    table = {
        "left": a.centroid[0] < b.centroid[0], "right": b.centroid[0] < a.centroid[0],
        "behind": a.centroid[1] < b.centroid[1], "front": b.centroid[1] < a.centroid[1],
        "smaller": vol(a) < vol(b), "larger": vol(b) < vol(a),
        "shorter": top(a) < top(b), "taller": top(b) < top(a),
    }
    if rel in table:
        return table[rel]
    if rel == "close_by":
        return oracle_distance(a, b) <= 0.45
    return oracle_symmetrical(a, b, ca, cb)


def random_scene(rng):
    n = int(rng.integers(2, 9))
    obbs, classes = {}, {}
    for i in range(n):
        if i > 0 and rng.random() < 0.3:
            # mirrored twin of a previous node across a random vertical plane
            j = int(rng.integers(i))
            src = obbs[j]
            beta = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(0.5, 3)
            c = (src.centroid[0] + dist * math.cos(beta), src.centroid[1] + dist * math.sin(beta),
                 src.centroid[2])
            yaw = 2 * beta - src.yaw + rng.normal(0, 0.3)
            dims = tuple(np.asarray(src.dims) * rng.uniform(0.93, 1.07, 3))
            obbs[i], classes[i] = Obb(c, dims, yaw), classes[j]
            continue
        dims = tuple(rng.uniform(0.2, 1.6, 3))
        c = (rng.uniform(-3, 3), rng.uniform(-3, 3), dims[2] / 2 + rng.choice([0.0, rng.uniform(0, 1)]))
        obbs[i], classes[i] = Obb(c, dims, rng.uniform(0, 2 * math.pi)), int(rng.integers(len(OBJ)))
    return obbs, classes


def test_eval_constraints_matches_brute_force_on_500_scenes():
    rng = np.random.default_rng(2024)
    totals = {r: 0 for r in RELATIONS}
    for _ in range(500):
        obbs, classes = random_scene(rng)
        ids = sorted(obbs)
        g = SceneGraph(OBJ, list(RELATIONS))
        for i in ids:
            g.add_node(SceneGraphNode(i, one_hot(classes[i], len(OBJ)), obbs[i]))
        expected = ConstraintReport()
        for s, o in itertools.permutations(ids, 2):
            if rng.random() < 0.6:
                rel = RELATIONS[int(rng.integers(len(RELATIONS)))]
                g.add_edge(SceneGraphEdge(s, o, one_hot(RELATIONS.index(rel), len(RELATIONS))))
                expected.total[rel] += 1
                expected.satisfied[rel] += oracle_holds(rel, obbs[s], obbs[o], classes[s], classes[o])
        got = eval_constraints(obbs, g)
        assert got.total == expected.total
        assert got.satisfied == expected.satisfied
        for r in RELATIONS:
            totals[r] += expected.total[r]
    assert min(totals.values()) > 100


def test_random_scenes_exercise_symmetry_both_ways():
    rng = np.random.default_rng(5)
    hits = misses = 0
    for _ in range(300):
        obbs, classes = random_scene(rng)
        for s, o in itertools.permutations(sorted(obbs), 2):
            if classes[s] == classes[o]:
                v = relation_holds("symmetrical", obbs[s], obbs[o], classes[s], classes[o])
                hits += v
                misses += not v
    assert hits > 50 and misses > 50


# -- close_by boundary --------------------------------------------------------------------

def gap_pair(gap, theta=0.0, vertical=False):
    """Two unit cubes whose surfaces are ``gap`` apart, optionally rotated by theta."""
    a = Obb((0.0, 0.0, 0.5), (1, 1, 1), theta)
    if vertical:
        return a, Obb((0.0, 0.0, 1.5 + gap), (1, 1, 1), theta)
    off = 1.0 + gap
    return a, Obb((off * math.cos(theta), off * math.sin(theta), 0.5), (1, 1, 1), theta)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, math.pi / 4, 2.5])
@pytest.mark.parametrize("vertical", [False, True])
def test_close_by_flips_at_threshold(theta, vertical):
    from scenegraph3d.geometry import obb_distance
    a, b = gap_pair(0.45, theta, vertical)
    assert obb_distance(a, b) == pytest.approx(0.45, abs=1e-12)
    # at the threshold itself the answer is decided by float rounding alone
    assert relation_holds("close_by", a, b) == (obb_distance(a, b) <= 0.45)
    for delta in (1e-9, 1e-6, 1e-3):
        assert relation_holds("close_by", *gap_pair(0.45 - delta, theta, vertical))
        assert not relation_holds("close_by", *gap_pair(0.45 + delta, theta, vertical))


def test_close_by_exact_threshold_representable():
    # 0.5 - 0.05 style arithmetic avoided: corners land on exact binary values
    a = Obb((-0.5, 0.0, 0.5), (1.0, 1.0, 1.0), 0.0)   # max x = 0
    b = Obb((0.45 + 0.5, 0.0, 0.5), (1.0, 1.0, 1.0), 0.0)
    from scenegraph3d.geometry import obb_distance
    d = obb_distance(a, b)
    assert abs(d - 0.45) <= 2 * np.spacing(0.45)
    assert relation_holds("close_by", a, b) == (d <= 0.45)


def test_close_by_examples():
    assert not relation_holds("close_by", *gap_pair(1.0))
    assert relation_holds("close_by", *gap_pair(0.4))


def test_custom_threshold():
    p = RelationParams(close_by=1.2)
    assert relation_holds("close_by", *gap_pair(1.0), params=p)


# -- relation properties ----------------------------------------------------------------

def test_mirror_consistency_and_symmetric_relations():
    rng = np.random.default_rng(9)
    for _ in range(200):
        obbs, classes = random_scene(rng)
        for s, o in itertools.permutations(sorted(obbs), 2):
            for rel in RELATIONS:
                assert relation_holds(rel, obbs[s], obbs[o], classes[s], classes[o]) == \
                    relation_holds(MIRROR[rel], obbs[o], obbs[s], classes[o], classes[s])


def test_ties_make_both_mirrors_false():
    a = Obb((1.0, 2.0, 0.5), (1, 1, 1), 0.0)
    b = Obb((1.0, 2.0, 0.5), (1, 1, 1), 1.0)
    for rel in ("left", "right", "front", "behind", "smaller", "larger", "taller", "shorter"):
        assert not relation_holds(rel, a, b)


def test_sign_example_left():
    assert relation_holds("left", Obb((-1, 0, 0.5), (1, 1, 1), 0), Obb((1, 0, 0.5), (1, 1, 1), 0))


def test_mirrored_chairs_symmetrical():
    theta = 0.4
    a = Obb((-1, 0, 0.5), (0.5, 0.6, 1), theta)
    b = Obb((1, 0, 0.5), (0.5, 0.6, 1), math.pi - theta)  # mirror across x = 0
    assert relation_holds("symmetrical", a, b, 0, 0)
    assert not relation_holds("symmetrical", a, b, 0, 1)


def test_unsupported_predicate():
    with pytest.raises(UnsupportedPredicate):
        relation_holds("above", Obb((0, 0, 0), (1, 1, 1), 0), Obb((0, 0, 0), (1, 1, 1), 0))
    with pytest.raises(UnsupportedPredicate):
        check_triplets({0: Obb((0, 0, 0), (1, 1, 1), 0), 1: Obb((2, 0, 0), (1, 1, 1), 0)},
                       {0: 0, 1: 0}, [(0, "above", 1)])


def test_annotate_examples():
    stacked = {0: Obb((0, 0, 0.5), (1, 1, 1), 0), 1: Obb((0, 0, 1.5), (1, 1, 1), 0)}
    trip = annotate_gt_predicates(stacked, {0: 0, 1: 1})
    assert (0, "close_by", 1) in trip
    assert not any(r in ("left", "right") for _, r, _ in trip)
    with pytest.raises(ValueError):
        annotate_gt_predicates({0: stacked[0]}, {0: 0})


def test_annotate_then_evaluate_is_self_consistent():
    rng = np.random.default_rng(77)
    for _ in range(100):
        obbs, classes = random_scene(rng)
        for cap in (None, 1):
            trip = annotate_gt_predicates(obbs, classes, max_per_pair=cap)
            rep = check_triplets(obbs, classes, trip)
            for r in RELATIONS:
                assert rep.accuracy(r) in (None, 1.0)
            if cap is None:
                for s, r, o in trip:
                    assert (o, MIRROR[r], s) in trip


def test_report_total_is_unweighted_mean():
    rep = ConstraintReport()
    rep.total.update(left=10, close_by=2)
    rep.satisfied.update(left=10, close_by=1)
    assert rep.total_accuracy == pytest.approx(0.75)
    assert rep.easy_accuracy == 1.0 and rep.hard_accuracy == 0.5
    d = rep.to_dict()
    assert d["per_relation"]["right"] is None


# -- recall ---------------------------------------------------------------------------------

PRED = ["left", "right", "close_by"]


def dist_graph(node_probs, edge_probs):
    g = SceneGraph(OBJ, PRED)
    for i, p in enumerate(node_probs):
        g.add_node(SceneGraphNode(i, np.asarray(p, float), Obb((i, 0, 0.5), (1, 1, 1), 0)))
    for (s, o), p in edge_probs.items():
        g.add_edge(SceneGraphEdge(s, o, np.asarray(p, float)))
    return g


def test_recall_of_self_is_one():
    g = graph_from_labels(OBJ, PRED, [(0, "chair", Obb((0, 0, .5), (1, 1, 1), 0)),
                                      (1, "lamp", Obb((2, 0, .5), (1, 1, 1), 0))],
                          [(0, "left", 1), (1, "right", 0)])
    r = recall(g, g)
    assert (r.recall_obj, r.recall_pred, r.recall_rel, r.mrecall_obj, r.mrecall_pred) == (1, 1, 1, 1, 1)


def test_uniform_prediction_picks_class_zero():
    gt = dist_graph([one_hot(0, 3), one_hot(1, 3)], {})
    pred = dist_graph([[1 / 3] * 3, [1 / 3] * 3], {})
    r = recall(pred, gt)
    assert r.recall_obj == 0.5 and r.mrecall_obj == 0.5


def test_top1_triplet_matches_exhaustive_product():
    rng = np.random.default_rng(3)
    for _ in range(200):
        ps, pp, po = (rng.dirichlet(np.ones(k)) for k in (3, 4, 3))
        best = max(itertools.product(range(3), range(4), range(3)),
                   key=lambda t: (ps[t[0]] * pp[t[1]] * po[t[2]], tuple(-x for x in t)))
        assert top1_triplet(ps, pp, po) == best


def test_recall_three_node_case():
    gt = dist_graph([one_hot(0, 3), one_hot(1, 3), one_hot(2, 3)],
                    {(0, 1): one_hot(0, 3), (1, 2): one_hot(2, 3), (2, 0): one_hot(1, 3)})
    pred = dist_graph([[0.6, 0.3, 0.1], [0.5, 0.4, 0.1], [0.1, 0.1, 0.8]],
                      {(0, 1): [0.7, 0.2, 0.1], (1, 2): [0.2, 0.3, 0.5], (2, 0): [0.5, 0.4, 0.1]})
    r = recall(pred, gt)
    assert r.recall_obj == pytest.approx(2 / 3)
    assert r.recall_pred == pytest.approx(2 / 3)
    # (0,1): node 1 predicted chair -> miss; (1,2): node 1 wrong -> miss; (2,0): pred wrong -> miss
    assert r.recall_rel == 0.0
    assert r.mrecall_obj == pytest.approx((1 + 0 + 1) / 3)


def test_unmatched_gt_node_counts_as_miss():
    gt = dist_graph([one_hot(0, 3), one_hot(1, 3)], {(0, 1): one_hot(0, 3)})
    pred = dist_graph([one_hot(0, 3)], {})
    r = recall(pred, gt)
    assert r.recall_obj == 0.5 and r.recall_pred == 0.0 and r.recall_rel == 0.0


def test_recall_rejects_many_to_one():
    gt = dist_graph([one_hot(0, 3), one_hot(1, 3)], {})
    with pytest.raises(ValueError):
        recall(gt, gt, {0: 0, 1: 0})


def test_recall_values_in_unit_interval():
    rng = np.random.default_rng(0)
    gt = dist_graph([one_hot(int(rng.integers(3)), 3) for _ in range(5)],
                    {(i, (i + 1) % 5): one_hot(int(rng.integers(3)), 3) for i in range(5)})
    pred = dist_graph([rng.dirichlet(np.ones(3)) for _ in range(5)],
                      {(i, (i + 1) % 5): rng.dirichlet(np.ones(3)) for i in range(5)})
    d = recall(pred, gt).to_dict()
    for k in ("recall_rel", "recall_obj", "recall_pred", "mrecall_obj", "mrecall_pred"):
        assert 0.0 <= d[k] <= 1.0
