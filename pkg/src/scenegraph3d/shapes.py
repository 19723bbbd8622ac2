"""Procedural shape catalog, code retrieval and scene assembly.

Each catalog entry pairs a unit-norm shape code with a parametric mesh
generator. Canonical meshes are centered at the origin with unit max
extent; assembly stretches them to fill a box exactly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Obb, rotation_z
from .graph import dumps
from .nn.checkpoint import atomic_write_text

SHAPE_CODE_DIM = 8


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def extents(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_closed(self) -> bool:
        """Every undirected edge is shared by exactly two triangles."""
        counts: Dict[Tuple[int, int], int] = {}
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        return all(c == 2 for c in counts.values())


# -- generators ----------------------------------------------------------------

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom (-z)
    [4, 5, 6], [4, 6, 7],  # top (+z)
    [0, 1, 5], [0, 5, 4],  # -y
    [1, 2, 6], [1, 6, 5],  # +x
    [2, 3, 7], [2, 7, 6],  # +y
    [3, 0, 4], [3, 4, 7],  # -x
])


def _cuboid(lo: Sequence[float], hi: Sequence[float], top_scale: float = 1.0) -> Mesh:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
    verts = []
    for z, s in ((z0, 1.0), (z1, top_scale)):
        verts += [(cx - s * hx, cy - s * hy, z), (cx + s * hx, cy - s * hy, z),
                  (cx + s * hx, cy + s * hy, z), (cx - s * hx, cy + s * hy, z)]
    return Mesh(np.array(verts), _BOX_FACES.copy())


def _merge(parts: Sequence[Mesh]) -> Mesh:
    verts, faces, off = [], [], 0
    for p in parts:
        verts.append(p.vertices)
        faces.append(p.faces + off)
        off += len(p.vertices)
    return Mesh(np.concatenate(verts), np.concatenate(faces))


def _normalize(mesh: Mesh) -> Mesh:
    lo, hi = mesh.extents()
    center = 0.5 * (lo + hi)
    return Mesh((mesh.vertices - center) / (hi - lo).max(), mesh.faces)


def gen_box(w: float = 1.0, d: float = 1.0, h: float = 1.0) -> Mesh:
    return _cuboid((-w / 2, -d / 2, -h / 2), (w / 2, d / 2, h / 2))


def gen_slab(w: float = 1.0, d: float = 1.0, h: float = 0.2) -> Mesh:
    return gen_box(w, d, h)


def gen_tapered_box(w: float = 1.0, d: float = 1.0, h: float = 1.0, taper: float = 0.6) -> Mesh:
    return _cuboid((-w / 2, -d / 2, -h / 2), (w / 2, d / 2, h / 2), top_scale=taper)


def gen_cylinder(radius: float = 0.5, h: float = 1.0, segments: int = 16) -> Mesh:
    verts = [(0.0, 0.0, -h / 2), (0.0, 0.0, h / 2)]
    for z in (-h / 2, h / 2):
        for k in range(segments):
            a = 2 * math.pi * k / segments
            verts.append((radius * math.cos(a), radius * math.sin(a), z))
    faces = []
    for k in range(segments):
        n = (k + 1) % segments
        b0, b1 = 2 + k, 2 + n
        t0, t1 = 2 + segments + k, 2 + segments + n
        faces += [(0, b1, b0), (1, t0, t1), (b0, b1, t1), (b0, t1, t0)]
    return Mesh(np.array(verts), np.array(faces))


def gen_box_with_legs(w: float = 1.0, d: float = 1.0, h: float = 1.0,
                      top: float = 0.15, leg: float = 0.1) -> Mesh:
    """Table/chair archetype: a top slab on four corner legs (closed parts)."""
    parts = [_cuboid((-w / 2, -d / 2, h / 2 - top), (w / 2, d / 2, h / 2))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            x0 = -w / 2 if sx < 0 else w / 2 - leg
            y0 = -d / 2 if sy < 0 else d / 2 - leg
            parts.append(_cuboid((x0, y0, -h / 2), (x0 + leg, y0 + leg, h / 2 - top)))
    return _merge(parts)


GENERATORS = {"box": gen_box, "slab": gen_slab, "tapered_box": gen_tapered_box,
              "cylinder": gen_cylinder, "box_with_legs": gen_box_with_legs}

# generator archetypes per default class, with per-entry parameter variants
_ARCHETYPES = {
    "table": [("box_with_legs", {"leg": 0.08}), ("box_with_legs", {"leg": 0.12, "top": 0.1}),
              ("slab", {"h": 0.3})],
    "chair": [("box_with_legs", {"leg": 0.1, "top": 0.2}), ("box", {}),
              ("box_with_legs", {"leg": 0.06})],
    "sofa": [("box", {}), ("tapered_box", {"taper": 0.85}), ("slab", {"h": 0.5})],
    "bed": [("slab", {"h": 0.35}), ("box", {}), ("box_with_legs", {"leg": 0.05, "top": 0.4})],
    "cabinet": [("box", {}), ("tapered_box", {"taper": 0.95}), ("box", {"d": 0.6})],
    "lamp": [("cylinder", {"segments": 12}), ("tapered_box", {"taper": 0.3}),
             ("cylinder", {"segments": 20, "radius": 0.3})],
    "desk": [("box_with_legs", {"leg": 0.07}), ("slab", {"h": 0.25}), ("box", {})],
    "shelf": [("box", {}), ("tapered_box", {"taper": 0.9}), ("box", {"w": 0.8})],
    "tv_stand": [("slab", {"h": 0.4}), ("box", {}), ("box_with_legs", {"leg": 0.05})],
    "nightstand": [("box", {}), ("box_with_legs", {"leg": 0.06, "top": 0.3}),
                   ("tapered_box", {"taper": 0.9})],
    "wardrobe": [("box", {}), ("tapered_box", {"taper": 0.97}), ("box", {"d": 0.7})],
    "plant": [("cylinder", {"segments": 10}), ("tapered_box", {"taper": 1.6}),
              ("cylinder", {"segments": 6})],
}
_FALLBACK = [("box", {}), ("cylinder", {"segments": 8})]


class UnknownClassError(KeyError):
    pass


@dataclass
class CatalogEntry:
    class_name: str
    code: np.ndarray
    generator: str
    params: Dict[str, float] = field(default_factory=dict)

    def mesh(self) -> Mesh:
        return _normalize(GENERATORS[self.generator](**self.params))

    def to_dict(self) -> dict:
        return {"class": self.class_name, "code": [float(v) for v in self.code],
                "generator": self.generator, "params": dict(self.params)}


class ShapeCatalog:
    def __init__(self, entries: Sequence[CatalogEntry]):
        self.entries = list(entries)
        self._by_class: Dict[str, List[int]] = {}
        for k, e in enumerate(self.entries):
            if e.generator not in GENERATORS:
                raise ValueError(f"unknown generator {e.generator!r}")
            self._by_class.setdefault(e.class_name, []).append(k)
        self._meshes: Dict[int, Mesh] = {}

    @classmethod
    def default(cls, classes: Sequence[str], seed: int = 0, per_class: int = 3) -> "ShapeCatalog":
        rng = np.random.default_rng(seed)
        entries = []
        for name in classes:
            specs = _ARCHETYPES.get(name, _FALLBACK)
            for k in range(per_class):
                code = rng.standard_normal(SHAPE_CODE_DIM)
                gen, params = specs[k % len(specs)]
                entries.append(CatalogEntry(name, code / np.linalg.norm(code), gen, dict(params)))
        return cls(entries)

    @property
    def classes(self) -> List[str]:
        return list(self._by_class)

    def class_entries(self, class_name: str) -> List[int]:
        if class_name not in self._by_class:
            raise UnknownClassError(class_name)
        return self._by_class[class_name]

    def mesh(self, index: int) -> Mesh:
        if index not in self._meshes:
            self._meshes[index] = self.entries[index].mesh()
        return self._meshes[index]

    def nearest(self, code: Sequence[float], class_name: str) -> int:
        """Index of the class entry with highest cosine similarity (ties: lowest)."""
        idx = self.class_entries(class_name)
        q = np.asarray(code, dtype=np.float64)
        qn = np.linalg.norm(q)
        sims = [float(self.entries[i].code @ q) / qn if qn > 0 else 0.0 for i in idx]
        return idx[int(np.argmax(sims))]

    def retrieve(self, code: Sequence[float], class_name: str) -> Mesh:
        return self.mesh(self.nearest(code, class_name))

    def prior_code(self, class_name: str) -> np.ndarray:
        """Initial shape code for a class: its first catalog entry."""
        return self.entries[self.class_entries(class_name)[0]].code.copy()

    def to_json(self) -> str:
        return dumps([e.to_dict() for e in self.entries])

    @classmethod
    def from_json(cls, text: str) -> "ShapeCatalog":
        return cls([CatalogEntry(d["class"], np.asarray(d["code"], dtype=np.float64),
                                 d["generator"], dict(d.get("params", {})))
                    for d in json.loads(text)])


# -- assembly ------------------------------------------------------------------


@dataclass
class SceneObject:
    node_id: int
    class_name: str
    obb: Obb
    mesh: Mesh
    shape_code: Optional[np.ndarray] = None
    entry: Optional[int] = None


@dataclass
class Scene:
    objects: List[SceneObject]


def place_mesh(mesh: Mesh, obb: Obb) -> Mesh:
    """Stretch a canonical mesh to the box dims, rotate by yaw, move to centroid."""
    lo, hi = mesh.extents()
    center = 0.5 * (lo + hi)
    scale = np.asarray(obb.dims) / (hi - lo)
    local = (mesh.vertices - center) * scale
    return Mesh(local @ rotation_z(obb.yaw).T + np.asarray(obb.centroid), mesh.faces.copy())


def assemble(layout: dict, catalog: ShapeCatalog) -> Scene:
    """Place a retrieved mesh in every box of a decoded layout."""
    objects = []
    for nd in layout["nodes"]:
        if "class" not in nd or "shape_code" not in nd or "obb" not in nd:
            raise ValueError(f"layout node {nd.get('id')} lacks class, obb or shape_code")
        obb = Obb.from_dict(nd["obb"])
        idx = catalog.nearest(nd["shape_code"], nd["class"])
        objects.append(SceneObject(int(nd["id"]), nd["class"], obb,
                                   place_mesh(catalog.mesh(idx), obb),
                                   np.asarray(nd["shape_code"], dtype=np.float64), idx))
    return Scene(objects)


def _group_name(obj: SceneObject) -> str:
    return f"node_{obj.node_id}_{obj.class_name}"


def scene_to_obj(scene: Scene) -> str:
    lines, base = ["# scenegraph3d scene"], 1
    for obj in scene.objects:
        lines.append(f"o {_group_name(obj)}")
        lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in obj.mesh.vertices]
        lines += [f"f {a + base} {b + base} {c + base}" for a, b, c in obj.mesh.faces]
        base += len(obj.mesh.vertices)
    return "\n".join(lines) + "\n"


def scene_sidecar(scene: Scene) -> dict:
    return {"nodes": [{"id": o.node_id, "class": o.class_name, "obb": o.obb.to_dict(),
                       "shape_code": None if o.shape_code is None else [float(v) for v in o.shape_code],
                       "entry": o.entry}
                      for o in scene.objects]}


def export_scene(scene: Scene, path, fmt: str = "obj") -> None:
    """Write ``path`` (OBJ) plus ``path.json`` sidecar, or JSON only."""
    if not scene.objects:
        raise ValueError("cannot export an empty scene")
    path = str(path)
    if fmt == "obj":
        atomic_write_text(path, scene_to_obj(scene))
        atomic_write_text(path + ".json", dumps(scene_sidecar(scene)))
    elif fmt == "json":
        atomic_write_text(path, dumps(scene_sidecar(scene)))
    else:
        raise ValueError(f"unknown export format {fmt!r}")


_GROUP = re.compile(r"^node_(-?\d+)_(.+)$")


def parse_obj(text: str) -> List[Tuple[str, Mesh]]:
    """Read back named groups; face indices are made group-local."""
    groups: List[Tuple[str, List, List]] = []
    total = 0
    for line in text.splitlines():
        tok = line.split()
        if not tok or tok[0] == "#":
            continue
        if tok[0] == "o":
            groups.append((tok[1], [], []))
        elif tok[0] == "v":
            groups[-1][1].append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            groups[-1][2].append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    out = []
    for name, verts, faces in groups:
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3) - total
        out.append((name, Mesh(np.asarray(verts).reshape(-1, 3), f)))
        total += len(verts)
    return out


def load_scene(obj_text: str, sidecar: dict) -> Scene:
    groups = parse_obj(obj_text)
    if len(groups) != len(sidecar["nodes"]):
        raise ValueError("OBJ groups and sidecar nodes disagree")
    objects = []
    for (name, mesh), nd in zip(groups, sidecar["nodes"]):
        m = _GROUP.match(name)
        if not m or int(m.group(1)) != nd["id"] or m.group(2) != nd["class"]:
            raise ValueError(f"group {name!r} does not match sidecar node {nd['id']}")
        code = nd.get("shape_code")
        objects.append(SceneObject(nd["id"], nd["class"], Obb.from_dict(nd["obb"]), mesh,
                                   None if code is None else np.asarray(code), nd.get("entry")))
    return Scene(objects)
