"""Benchmark geometries as closed triangulations of the unit object B.

Box unions (cube, L-shape, key) are triangulated on the rectilinear grid
spanned by all box faces, which makes the base mesh conforming by
construction.  ``resolution`` counts uniform quadrisections applied to the
base mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mesh import MeshError, SurfaceMesh, check, uniform_refine

TETRAHEDRON_VERTICES = ((0.0, 0.0, 0.0), (7.0, 0.0, 0.0), (5.5, 4.6, 0.0), (3.3, 2.0, 5.0))

LSHAPE_BOXES = (
    ((0.0, 7.8), (0.0, 2.0), (0.0, 1.5)),
    ((0.0, 2.2), (2.0, 5.6), (0.0, 1.5)),
)

KEY_BOXES = (
    ((-7.0, 7.0), (3.0, 15.0), (-1.25, 1.25)),    # bow
    ((-4.0, 4.0), (0.0, 4.0), (-1.25, 1.25)),     # shoulder
    ((-3.25, 3.25), (-19.0, 0.0), (-1.25, 1.25)),  # blade
)
# Stand-in for the blade cuts: two through-thickness notches on the +x side.
KEY_NOTCH_DEPTH = 1.5
KEY_NOTCH_HEIGHT = 2.0
KEY_NOTCHES = (
    ((3.25 - KEY_NOTCH_DEPTH, 3.25), (-15.0, -15.0 + KEY_NOTCH_HEIGHT), (-1.25, 1.25)),
    ((3.25 - KEY_NOTCH_DEPTH, 3.25), (-9.0, -9.0 + KEY_NOTCH_HEIGHT), (-1.25, 1.25)),
)

KINDS = ("sphere", "ellipsoid", "cube", "lshape", "tetrahedron", "key", "external")


@dataclass(frozen=True)
class GeometrySpec:
    """Description of the unit object B.

    ``params`` holds ``radius`` (sphere), ``axes`` (ellipsoid, a >= b >= c),
    ``vertices`` (tetrahedron), ``path`` (external) and optionally
    ``max_edge`` (box unions: grid spacing of the base mesh).
    """

    kind: str
    params: dict = field(default_factory=dict)
    resolution: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MeshError(f"unknown geometry kind {self.kind!r}; expected one of {KINDS}")
        if self.resolution < 0:
            raise MeshError("resolution must be >= 0")
        if self.kind == "sphere" and not self.params.get("radius", 1.0) > 0:
            raise MeshError("sphere radius must be positive")
        if self.kind == "ellipsoid":
            a, b, c = self.params.get("axes", (1.0, 1.0, 1.0))
            if not 0 < c <= b <= a:
                raise MeshError(f"ellipsoid axes must satisfy 0 < c <= b <= a, got {(a, b, c)}")
        if self.kind == "tetrahedron":
            v = np.asarray(self.params.get("vertices", TETRAHEDRON_VERTICES), dtype=float)
            if v.shape != (4, 3):
                raise MeshError("tetrahedron needs four 3D vertices")
            vol = np.linalg.det(np.stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]]))
            scale = np.max(np.ptp(v, axis=0)) ** 3
            if abs(vol) <= 1e-12 * scale:
                raise MeshError("tetrahedron vertices are coplanar")
        if self.kind == "external" and "path" not in self.params:
            raise MeshError("external geometry needs a 'path'")

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "resolution": self.resolution}


def build_primitive(spec: GeometrySpec, resolution: Optional[int] = None) -> SurfaceMesh:
    """Build the base mesh of ``spec`` and quadrisect it ``resolution`` times."""
    level = spec.resolution if resolution is None else resolution
    if level < 0:
        raise MeshError("resolution must be >= 0")
    p = spec.params
    if spec.kind == "sphere":
        mesh = icosphere(p.get("radius", 1.0))
    elif spec.kind == "ellipsoid":
        mesh = ellipsoid(*p.get("axes", (1.0, 1.0, 1.0)))
    elif spec.kind == "cube":
        s = p.get("side", 1.0)
        mesh = box_union([((0.0, s), (0.0, s), (0.0, s))], max_edge=p.get("max_edge"))
    elif spec.kind == "lshape":
        mesh = box_union(LSHAPE_BOXES, max_edge=p.get("max_edge"))
    elif spec.kind == "key":
        mesh = box_union(KEY_BOXES, KEY_NOTCHES, max_edge=p.get("max_edge"))
    elif spec.kind == "tetrahedron":
        mesh = tetrahedron(p.get("vertices", TETRAHEDRON_VERTICES))
    else:
        from .meshio import import_mesh

        mesh = import_mesh(Path(p["path"]))
    for _ in range(level):
        mesh = uniform_refine(mesh)
    return check(mesh)


def icosphere(radius: float = 1.0) -> SurfaceMesh:
    g = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
        [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
        [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1]], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v *= radius / np.linalg.norm(v, axis=1)[:, None]
    return SurfaceMesh(v, f, {"type": "sphere", "radius": float(radius), "center": (0.0, 0.0, 0.0)})


def ellipsoid(a: float, b: float, c: float) -> SurfaceMesh:
    base = icosphere(1.0)
    axes = (float(a), float(b), float(c))
    return SurfaceMesh(base.vertices * np.array(axes), base.triangles,
                       {"type": "ellipsoid", "axes": axes, "center": (0.0, 0.0, 0.0)})


def tetrahedron(vertices: Sequence[Sequence[float]]) -> SurfaceMesh:
    v = np.asarray(vertices, dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    if np.linalg.det(np.stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]])) < 0:
        f = f[:, ::-1]
    return SurfaceMesh(v, f)


def _grid_lines(bounds: np.ndarray, max_edge: Optional[float]) -> np.ndarray:
    lines = np.unique(bounds)
    if max_edge is None:
        return lines
    out = [lines[:1]]
    for lo, hi in zip(lines[:-1], lines[1:]):
        n = max(1, int(np.ceil((hi - lo) / max_edge - 1e-9)))
        out.append(np.linspace(lo, hi, n + 1)[1:])
    return np.concatenate(out)


def box_union(boxes, holes=(), max_edge: Optional[float] = None) -> SurfaceMesh:
    """Boundary of (union of ``boxes``) minus (union of ``holes``).

    Boxes are ``((x0, x1), (y0, y1), (z0, z1))``.  Each boundary grid face is
    split into two triangles with outward orientation.
    """
    boxes = np.asarray(boxes, dtype=float)
    holes = np.asarray(holes, dtype=float).reshape(-1, 3, 2)
    allb = np.concatenate([boxes, holes]) if len(holes) else boxes
    axes = [_grid_lines(allb[:, d, :], max_edge) for d in range(3)]
    centres = [0.5 * (ax[1:] + ax[:-1]) for ax in axes]
    cx, cy, cz = np.meshgrid(*centres, indexing="ij")

    def inside(bx):
        return ((cx > bx[0, 0]) & (cx < bx[0, 1]) & (cy > bx[1, 0]) & (cy < bx[1, 1])
                & (cz > bx[2, 0]) & (cz < bx[2, 1]))

    solid = np.zeros(cx.shape, dtype=bool)
    for bx in boxes:
        solid |= inside(bx)
    for bx in holes:
        solid &= ~inside(bx)
    if not solid.any():
        raise MeshError("box union is empty")

    shape = tuple(len(a) for a in axes)
    vid = np.arange(np.prod(shape)).reshape(shape)
    tris = []
    for d in range(3):
        pad = [(0, 0)] * 3
        pad[d] = (1, 1)
        s = np.pad(solid, pad)
        lo = np.take(s, range(0, s.shape[d] - 1), axis=d)
        hi = np.take(s, range(1, s.shape[d]), axis=d)
        # face index k along d sits on grid line k; outward normal +d where lo is solid
        for sign, mask in ((+1, lo & ~hi), (-1, hi & ~lo)):
            idx = np.argwhere(mask)
            if not len(idx):
                continue
            e1, e2 = (d + 1) % 3, (d + 2) % 3

            def corner(o1, o2):
                c = idx.copy()
                c[:, e1] += o1
                c[:, e2] += o2
                return vid[c[:, 0], c[:, 1], c[:, 2]]

            p00, p10, p11, p01 = corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)
            # (e1, e2, d) is right-handed: counter-clockwise in (e1, e2) faces +d
            if sign > 0:
                tris.append(np.stack([p00, p10, p11], 1))
                tris.append(np.stack([p00, p11, p01], 1))
            else:
                tris.append(np.stack([p00, p11, p10], 1))
                tris.append(np.stack([p00, p01, p11], 1))
    tri = np.concatenate(tris)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    used = np.unique(tri)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(verts[used], remap[tri])


def box_union_volume(boxes, holes=()) -> float:
    """Exact volume of a box union by inclusion on the shared grid."""
    boxes = np.asarray(boxes, dtype=float)
    holes = np.asarray(holes, dtype=float).reshape(-1, 3, 2)
    allb = np.concatenate([boxes, holes]) if len(holes) else boxes
    axes = [np.unique(allb[:, d, :]) for d in range(3)]
    centres = [0.5 * (a[1:] + a[:-1]) for a in axes]
    widths = [np.diff(a) for a in axes]
    cx, cy, cz = np.meshgrid(*centres, indexing="ij")
    wx, wy, wz = np.meshgrid(*widths, indexing="ij")
    solid = np.zeros(cx.shape, dtype=bool)
    for group, value in ((boxes, True), (holes, False)):
        for b in group:
            m = ((cx > b[0, 0]) & (cx < b[0, 1]) & (cy > b[1, 0]) & (cy < b[1, 1])
                 & (cz > b[2, 0]) & (cz < b[2, 1]))
            solid = (solid | m) if value else (solid & ~m)
    return float(np.sum(wx * wy * wz * solid))
