import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from conftest import random_obb
from scenegraph3d.geometry import (Obb, fit_obb, neighbor_graph, obb_corners, obb_distance,
                                  obb_overlap, pose_descriptor, rotation_z, wrap_angle)


def points_inside(obb, pts, tol=0.0):
    local = (pts - np.asarray(obb.centroid)) @ rotation_z(obb.yaw)
    return np.all(np.abs(local) <= 0.5 * np.asarray(obb.dims) + tol, axis=1)


def sample_volume(rng, obb, n):
    local = (rng.random((n, 3)) - 0.5) * np.asarray(obb.dims)
    return local @ rotation_z(obb.yaw).T + np.asarray(obb.centroid)


def point_box_distance(pts, obb):
    """Closed-form distance from points to a solid box (clamp in the local frame)."""
    local = (pts - np.asarray(obb.centroid)) @ rotation_z(obb.yaw)
    excess = np.maximum(np.abs(local) - 0.5 * np.asarray(obb.dims), 0.0)
    return np.sqrt((excess ** 2).sum(axis=1))


def surface_grid(obb, h):
    """Points on every face of ``obb`` on a grid with spacing <= h."""
    d = np.asarray(obb.dims)
    faces = []
    for axis in range(3):
        u, v = [k for k in range(3) if k != axis]
        gu = np.linspace(-d[u] / 2, d[u] / 2, int(np.ceil(d[u] / h)) + 1)
        gv = np.linspace(-d[v] / 2, d[v] / 2, int(np.ceil(d[v] / h)) + 1)
        uu, vv = np.meshgrid(gu, gv)
        for sign in (-0.5, 0.5):
            f = np.zeros((uu.size, 3))
            f[:, u], f[:, v], f[:, axis] = uu.ravel(), vv.ravel(), sign * d[axis]
            faces.append(f)
    local = np.concatenate(faces)
    return local @ rotation_z(obb.yaw).T + np.asarray(obb.centroid)


def sample_surface(rng, obb, n):
    local = (rng.random((n, 3)) - 0.5) * np.asarray(obb.dims)
    axis = rng.integers(0, 3, n)
    sign = rng.choice([-0.5, 0.5], n)
    local[np.arange(n), axis] = sign * np.asarray(obb.dims)[axis]
    return local @ rotation_z(obb.yaw).T + np.asarray(obb.centroid)


def test_obb_validation():
    with pytest.raises(ValueError):
        Obb((0, 0, 0), (1, 0, 1), 0.0)
    with pytest.raises(ValueError):
        Obb((0, 0, math.nan), (1, 1, 1), 0.0)
    assert Obb((0, 0, 0), (1, 1, 1), -math.pi / 2).yaw == pytest.approx(1.5 * math.pi)


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 101):
        w = wrap_angle(a)
        assert 0.0 <= w < 2 * math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)


def test_corners_unit_cube():
    c = obb_corners(Obb((0, 0, 0.5), (1, 1, 1), 0.0))
    assert np.allclose(c[0], [-0.5, -0.5, 0.0])
    assert np.allclose(c[:4, 2], 0.0) and np.allclose(c[4:, 2], 1.0)


def test_footprint_matches_shapely_area(rng):
    for _ in range(50):
        o = random_obb(rng)
        assert Polygon(o.footprint()).area == pytest.approx(o.dims[0] * o.dims[1], rel=1e-12)


def test_overlap_vs_point_sampling_oracle(rng):
    """Disagreement with the sampling oracle is allowed only near the boundary."""
    disagreements = 0
    for _ in range(300):
        a, b = random_obb(rng, spread=1.2), random_obb(rng, spread=1.2)
        pts = sample_volume(rng, a, 4000)
        oracle = bool(points_inside(b, pts).any())
        if oracle != obb_overlap(a, b):
            disagreements += 1
            # a miss by the sampler: boxes must be within the 0.01 m band
            assert obb_distance(a.inflated(-0.005), b.inflated(-0.005)) <= 0.01 or \
                obb_distance(a, b) <= 0.01
        if oracle:
            assert obb_overlap(a, b)
    assert disagreements < 30


def test_overlap_vs_shapely(rng):
    for _ in range(300):
        a, b = random_obb(rng, spread=1.5), random_obb(rng, spread=1.5)
        vert = min(a.top, b.top) >= max(a.bottom, b.bottom)
        plane = Polygon(a.footprint()).intersects(Polygon(b.footprint()))
        assert obb_overlap(a, b) == (vert and plane)


def test_distance_vs_surface_sampling_oracle(rng):
    checked = 0
    for _ in range(200):
        a, b = random_obb(rng, spread=2.5), random_obb(rng, spread=2.5)
        d = obb_distance(a, b)
        if d == 0.0:
            assert obb_overlap(a, b)
            continue
        # grid spacing 0.02 bounds the sampling error by 0.02 / sqrt(2)
        oracle = float(point_box_distance(surface_grid(a, 0.02), b).min())
        assert oracle >= d - 1e-9
        assert oracle - d <= 0.02
        checked += 1
    assert checked > 100


def test_distance_planar_matches_shapely(rng):
    for _ in range(200):
        a = random_obb(rng, spread=2.5)
        b = random_obb(rng, spread=2.5)
        b = Obb((b.centroid[0], b.centroid[1], a.centroid[2]), (b.dims[0], b.dims[1], a.dims[2]), b.yaw)
        expect = Polygon(a.footprint()).distance(Polygon(b.footprint()))
        assert obb_distance(a, b) == pytest.approx(expect, abs=1e-9)


def test_distance_vertical_only():
    a = Obb((0, 0, 0.5), (1, 1, 1), 0.3)
    b = Obb((0, 0, 2.0), (1, 1, 1), 1.1)
    assert obb_distance(a, b) == pytest.approx(0.5)


def test_distance_symmetric_and_zero_on_touch():
    a = Obb((0, 0, 0.5), (1, 1, 1), 0.0)
    b = Obb((1, 0, 0.5), (1, 1, 1), 0.0)
    assert obb_distance(a, b) == 0.0 and obb_overlap(a, b)
    c = Obb((1.7, 0.4, 0.5), (1, 0.5, 1), 0.4)
    assert obb_distance(a, c) == obb_distance(c, a)


def test_pose_descriptor_translation_invariance_exact():
    a = Obb((0.25, -1.5, 0.5), (1.0, 0.5, 1.0), 0.0)
    b = Obb((2.0, 0.75, 0.25), (0.5, 0.5, 0.5), math.pi / 2)
    t = (4.0, -8.0, 2.0)  # powers of two keep every sum exact
    assert np.array_equal(pose_descriptor(a, b), pose_descriptor(a.translated(t), b.translated(t)))


def test_pose_descriptor_antisymmetric_exact(rng):
    for _ in range(100):
        a, b = random_obb(rng), random_obb(rng)
        assert np.array_equal(pose_descriptor(a, b), -pose_descriptor(b, a))


def test_pose_descriptor_axis_aligned_by_hand():
    a = Obb((0, 0, 0.5), (2, 2, 1), 0.0)
    b = Obb((3, 0, 0.25), (1, 1, 0.5), 0.0)
    assert np.allclose(pose_descriptor(a, b), [1 - 3.5, -1 - 2.5, 1 - 0.5, -1 + 0.5, 1 - 0.5, 0])


def test_neighbor_graph_margin():
    a = Obb((0, 0, 0.5), (1, 1, 1), 0.0)
    b = Obb((1.8, 0, 0.5), (1, 1, 1), 0.0)  # 0.8 m gap
    assert neighbor_graph([a, b], margin=0.5) == [(0, 1), (1, 0)]
    assert neighbor_graph([a, b], margin=0.3) == []
    assert neighbor_graph([a], margin=0.5) == []
    assert neighbor_graph([a, b], ids=[7, 3], margin=0.5) == [(3, 7), (7, 3)]
    with pytest.raises(ValueError):
        neighbor_graph([a, b], margin=-1)


def test_fit_obb_recovers_box(rng):
    o = random_obb(rng)
    pts = sample_surface(rng, o, 5000)
    f = fit_obb(pts, o.yaw)
    assert np.allclose(f.dims, o.dims, atol=0.05)
    assert np.allclose(f.centroid, o.centroid, atol=0.05)


def test_obb_dict_roundtrip(rng):
    o = random_obb(rng)
    assert Obb.from_dict(o.to_dict()) == o
