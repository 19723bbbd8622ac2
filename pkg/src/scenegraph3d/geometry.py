"""Oriented bounding boxes with yaw-only rotation.

Frame convention: right-handed, +z up, meters; yaw is counterclockwise
when viewed from +z. Because rotation is restricted to the vertical axis,
every box is a prism (footprint polygon x height interval), which makes
overlap and distance queries separable into a 2D polygon problem and a 1D
interval problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi
MIN_DIM = 1e-6


def wrap_angle(angle: float) -> float:
    """Normalize an angle to [0, 2*pi)."""
    a = math.fmod(float(angle), TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a tiny negative number can land exactly on 2*pi after the add
    if a >= TWO_PI:
        a = 0.0
    return a


@dataclass(frozen=True)
class Obb:
    """Oriented bounding box: centroid, (width, depth, height), yaw."""

    centroid: Tuple[float, float, float]
    dims: Tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.centroid)
        d = tuple(float(v) for v in self.dims)
        if len(c) != 3 or len(d) != 3:
            raise ValueError("centroid and dims must be 3-vectors")
        if not all(math.isfinite(v) for v in c + d) or not math.isfinite(float(self.yaw)):
            raise ValueError(f"non-finite box parameters: {c}, {d}, {self.yaw}")
        if min(d) <= MIN_DIM:
            raise ValueError(f"degenerate box dims {d}; every dim must exceed {MIN_DIM} m")
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def bottom(self) -> float:
        return self.centroid[2] - 0.5 * self.dims[2]

    @property
    def top(self) -> float:
        return self.centroid[2] + 0.5 * self.dims[2]

    def inflated(self, margin: float) -> "Obb":
        """Box grown by ``margin`` on every side."""
        return Obb(self.centroid, tuple(d + 2.0 * margin for d in self.dims), self.yaw)

    def translated(self, offset: Sequence[float]) -> "Obb":
        return Obb(tuple(c + o for c, o in zip(self.centroid, offset)), self.dims, self.yaw)

    def footprint(self) -> np.ndarray:
        """Counterclockwise 4x2 ground-plane polygon."""
        return obb_corners(self)[:4, :2]

    def to_dict(self) -> dict:
        return {"centroid": list(self.centroid), "dims": list(self.dims), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Obb":
        return cls(tuple(d["centroid"]), tuple(d["dims"]), d.get("yaw", 0.0))


# Local-frame corner signs. Bottom face first (z = -h/2), then top face; each
# face is counterclockwise seen from +z starting at (-w/2, -d/2).
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def obb_corners(obb: Obb) -> np.ndarray:
    """Return the 8 world-space corners as an (8, 3) array.

    Rows 0-3 are the bottom face and rows 4-7 the top face, each ordered
    counterclockwise (viewed from +z) starting at the local (-w/2, -d/2)
    corner.
    """
    half = 0.5 * np.asarray(obb.dims)
    local = _CORNER_SIGNS * half
    return local @ rotation_z(obb.yaw).T + np.asarray(obb.centroid)


def _polygon_axes(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def polygons_intersect(p: np.ndarray, q: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (touching counts)."""
    for axis in np.concatenate([_polygon_axes(p), _polygon_axes(q)]):
        pp = p @ axis
        qq = q @ axis
        if pp.max() < qq.min() or qq.max() < pp.min():
            return False
    return True


def _point_segment_distance(pt: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.dot(pt - a, ab) / np.dot(ab, ab))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(pt - (a + t * ab)))


def polygon_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Exact distance between two convex polygons; 0 when they intersect."""
    if polygons_intersect(p, q):
        return 0.0
    best = math.inf
    for src, dst in ((p, q), (q, p)):
        n = len(dst)
        for pt in src:
            for k in range(n):
                best = min(best, _point_segment_distance(pt, dst[k], dst[(k + 1) % n]))
    return best


def interval_gap(lo_a: float, hi_a: float, lo_b: float, hi_b: float) -> float:
    return max(0.0, lo_b - hi_a, lo_a - hi_b)


def obb_overlap(a: Obb, b: Obb) -> bool:
    """True iff the two boxes intersect (shared boundary counts)."""
    if interval_gap(a.bottom, a.top, b.bottom, b.top) > 0.0:
        return False
    return polygons_intersect(a.footprint(), b.footprint())


def obb_distance(a: Obb, b: Obb) -> float:
    """Closest-point distance between two boxes, 0 when they overlap."""
    d_vert = interval_gap(a.bottom, a.top, b.bottom, b.top)
    d_plane = polygon_distance(a.footprint(), b.footprint())
    return math.hypot(d_plane, d_vert)


def neighbor_graph(obbs: Sequence[Obb], ids: Sequence[int] | None = None,
                   margin: float = 0.5) -> List[Tuple[int, int]]:
    """Directed id pairs for every box pair whose margin-inflated boxes collide.

    Each undirected neighbor pair is emitted as both (i, j) and (j, i), in
    ascending (i, j) order.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if ids is None:
        ids = list(range(len(obbs)))
    grown = [o.inflated(margin) for o in obbs]
    pairs = []
    for a in range(len(grown)):
        for b in range(a + 1, len(grown)):
            if obb_overlap(grown[a], grown[b]):
                pairs.append((ids[a], ids[b]))
                pairs.append((ids[b], ids[a]))
    return sorted(pairs)


def pose_descriptor(a: Obb, b: Obb) -> np.ndarray:
    """Per-axis corner extrema differences between two boxes.

    Layout: (dmax_x, dmin_x, dmax_y, dmin_y, dmax_z, dmin_z) where
    dmax_k = max_k(corners(a)) - max_k(corners(b)).
    """
    ca, cb = obb_corners(a), obb_corners(b)
    out = np.empty(6)
    out[0::2] = ca.max(axis=0) - cb.max(axis=0)
    out[1::2] = ca.min(axis=0) - cb.min(axis=0)
    return out


def fit_obb(points: Iterable[Sequence[float]], yaw: float) -> Obb:
    """Tight box around ``points`` in the frame rotated by a known yaw."""
    pts = np.asarray(list(points), dtype=np.float64)
    rot = rotation_z(yaw)
    local = pts @ rot  # world -> local: R^T p, written row-wise
    lo, hi = local.min(axis=0), local.max(axis=0)
    center_local = 0.5 * (lo + hi)
    return Obb(tuple(rot @ center_local), tuple(hi - lo), yaw)
