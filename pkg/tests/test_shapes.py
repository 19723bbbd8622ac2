import math

import numpy as np
import pytest

from scenegraph3d.config import OBJECT_CLASSES
from scenegraph3d.geometry import Obb, fit_obb
from scenegraph3d.shapes import (GENERATORS, Mesh, ShapeCatalog, UnknownClassError, assemble,
                                export_scene, gen_box, load_scene, parse_obj, place_mesh)


@pytest.fixture(scope="module")
def catalog():
    return ShapeCatalog.default(OBJECT_CLASSES, seed=0, per_class=3)


def test_catalog_invariants(catalog):
    for name in OBJECT_CLASSES:
        idx = catalog.class_entries(name)
        assert len(idx) >= 2
        codes = np.array([catalog.entries[i].code for i in idx])
        assert np.allclose(np.linalg.norm(codes, axis=1), 1.0, atol=1e-12)
        assert len({tuple(c) for c in codes}) == len(codes)
    assert ShapeCatalog.from_json(catalog.to_json()).to_json() == catalog.to_json()


@pytest.mark.parametrize("gen", sorted(GENERATORS))
def test_primitive_meshes_are_closed_and_nondegenerate(gen):
    mesh = GENERATORS[gen]()
    assert mesh.is_closed()
    assert mesh.triangle_areas().min() > 1e-12


def test_retrieval(catalog):
    idx = catalog.class_entries("chair")
    for i in idx:
        assert catalog.nearest(catalog.entries[i].code, "chair") == i
    two = ShapeCatalog.default(["lamp"], seed=3, per_class=2)
    a, b = two.class_entries("lamp")
    assert two.nearest(-two.entries[a].code, "lamp") == b
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert catalog.nearest(rng.standard_normal(8), "sofa") in catalog.class_entries("sofa")
    with pytest.raises(UnknownClassError):
        catalog.nearest(np.ones(8), "spaceship")


def test_place_unit_cube():
    cube = gen_box(1, 1, 1)
    placed = place_mesh(cube, Obb((1, 0, 0), (2, 4, 2), 0.0))
    lo, hi = placed.extents()
    assert np.allclose(lo, [0, -2, -1], atol=1e-12) and np.allclose(hi, [2, 2, 1], atol=1e-12)


def test_yaw_pi_is_point_reflection(catalog):
    mesh = catalog.mesh(catalog.class_entries("chair")[0])
    c = np.array([0.5, -1.0, 0.4])
    a = place_mesh(mesh, Obb(c, (0.6, 0.5, 0.9), 0.0))
    b = place_mesh(mesh, Obb(c, (0.6, 0.5, 0.9), math.pi))
    ref = a.vertices.copy()
    ref[:, :2] = 2 * c[:2] - ref[:, :2]
    assert np.allclose(b.vertices, ref, atol=1e-12)


def test_assembled_extents_recover_obb(catalog):
    rng = np.random.default_rng(1)
    nodes = []
    for k, name in enumerate(OBJECT_CLASSES):
        obb = Obb(rng.uniform(-3, 3, 3), rng.uniform(0.2, 2, 3), rng.uniform(0, 2 * math.pi))
        nodes.append({"id": k, "class": name, "obb": obb.to_dict(), "shape_code": rng.standard_normal(8).tolist()})
    scene = assemble({"nodes": nodes}, catalog)
    for nd, obj in zip(nodes, scene.objects):
        want = Obb.from_dict(nd["obb"])
        got = fit_obb(obj.mesh.vertices, want.yaw)
        assert np.allclose(got.dims, want.dims, atol=1e-6)
        assert np.allclose(got.centroid, want.centroid, atol=1e-6)
        canon = catalog.mesh(obj.entry)
        assert len(obj.mesh.vertices) == len(canon.vertices)
        assert np.array_equal(obj.mesh.faces, canon.faces)


def test_export_is_byte_stable_and_parses(catalog, tmp_path):
    layout = {"nodes": [{"id": 2, "class": "bed", "obb": Obb((0, 0, 0.3), (2, 1.6, 0.6), 1.0).to_dict(),
                         "shape_code": [0.1] * 8}]}
    export_scene(assemble(layout, catalog), tmp_path / "a.obj")
    export_scene(assemble(layout, catalog), tmp_path / "b.obj")
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    text = (tmp_path / "a.obj").read_text()
    groups = parse_obj(text)
    assert [g for g, _ in groups] == ["node_2_bed"]
    import json
    side = json.loads((tmp_path / "a.obj.json").read_text())
    assert side["nodes"][0]["obb"] == layout["nodes"][0]["obb"]
    scene = load_scene(text, side)
    assert len(scene.objects[0].mesh.vertices) == len(groups[0][1].vertices)


def test_assembly_errors(catalog, tmp_path):
    with pytest.raises(ValueError):
        assemble({"nodes": [{"id": 0, "class": "bed"}]}, catalog)
    with pytest.raises(ValueError):
        export_scene(assemble({"nodes": []}, catalog), tmp_path / "x.obj")
    with pytest.raises(ValueError):
        Mesh([[0, 0, 0]], [[0, 1, 2]])
