"""Closed triangulated surfaces: validation, measures and refinement."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

#: Relative area threshold below which a triangle counts as degenerate.
DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """A mesh violates one of the closed-surface invariants."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Immutable oriented triangulation of a closed surface.

    Parameters
    ----------
    vertices : (nv, 3) float array
    triangles : (nt, 3) int array, counter-clockwise seen from outside.
    surface : optional analytic descriptor used to project new vertices,
        ``{"type": "sphere", "radius": r, "center": c}`` or
        ``{"type": "ellipsoid", "axes": (a, b, c), "center": c}``.
    parent : (nt,) index of the parent triangle in the mesh this one was
        refined from (-1 on a base mesh).
    green : (nt, 3) vertex triple of the bisected parent for green
        closure triangles, -1 rows elsewhere.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    surface: Optional[dict] = None
    parent: Optional[np.ndarray] = None
    green: Optional[np.ndarray] = None
    level: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (n, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle references a vertex index out of range")
        parent = (np.full(len(t), -1, dtype=np.int64) if self.parent is None
                  else np.asarray(self.parent, dtype=np.int64))
        green = (np.full((len(t), 3), -1, dtype=np.int64) if self.green is None
                 else np.asarray(self.green, dtype=np.int64))
        for arr in (v, t, parent, green):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "green", green)

    def __len__(self):
        return len(self.triangles)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def corners(self) -> np.ndarray:
        """(nt, 3, 3) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        n = self._cross.copy()
        norm = np.linalg.norm(n, axis=1)
        norm[norm == 0] = 1.0
        return n / norm[:, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""
        c = self.corners
        e = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha1()
        digest.update(self.vertices.tobytes())
        digest.update(self.triangles.tobytes())
        return digest.hexdigest()

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (ne, 2), sorted vertex pairs."""
        return np.unique(np.sort(self._directed_edges, axis=1), axis=0)

    @cached_property
    def _directed_edges(self) -> np.ndarray:
        t = self.triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def vertex_triangles(self):
        """CSR-style incidence: (offsets, triangle indices) per vertex."""
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return offsets, order // 3

    def translated(self, shift) -> "SurfaceMesh":
        shift = np.asarray(shift, dtype=float)
        surface = None
        if self.surface is not None:
            surface = dict(self.surface)
            surface["center"] = tuple(np.asarray(surface.get("center", (0, 0, 0))) + shift)
        return SurfaceMesh(self.vertices + shift, self.triangles, surface,
                           self.parent, self.green, self.level)

    def rotated(self, rot) -> "SurfaceMesh":
        rot = np.asarray(rot, dtype=float)
        return SurfaceMesh(self.vertices @ rot.T, self.triangles, None,
                           self.parent, self.green, self.level)


@dataclass
class MeshReport:
    n_vertices: int
    n_triangles: int
    open_edges: list = field(default_factory=list)
    nonmanifold_edges: list = field(default_factory=list)
    misoriented_triangles: list = field(default_factory=list)
    degenerate_triangles: list = field(default_factory=list)
    volume: float = float("nan")
    area: float = float("nan")
    h: float = float("nan")

    @property
    def ok(self) -> bool:
        return not (self.open_edges or self.nonmanifold_edges
                    or self.misoriented_triangles or self.degenerate_triangles) and self.volume > 0

    def errors(self) -> list:
        msgs = []
        if self.open_edges:
            a, b = self.open_edges[0]
            msgs.append(f"open surface: edge ({a}, {b}) is used by only one triangle"
                        f" ({len(self.open_edges)} such edges)")
        if self.nonmanifold_edges:
            a, b = self.nonmanifold_edges[0]
            msgs.append(f"non-manifold edge ({a}, {b}) shared by more than two triangles")
        if self.misoriented_triangles:
            msgs.append("inconsistent orientation at triangle "
                        + ", ".join(str(t) for t in self.misoriented_triangles[:10]))
        if self.degenerate_triangles:
            msgs.append(f"degenerate triangle {self.degenerate_triangles[0]}"
                        f" ({len(self.degenerate_triangles)} with area below tolerance)")
        if not msgs and not self.volume > 0:
            msgs.append(f"normals point inward: enclosed volume {self.volume:.6g} <= 0")
        return msgs


def validate(mesh: SurfaceMesh) -> MeshReport:
    """Check watertightness, orientation, degeneracy and outward normals."""
    report = MeshReport(mesh.n_vertices, mesh.n_triangles)
    if mesh.n_triangles == 0:
        report.open_edges.append((-1, -1))
        return report
    directed = mesh._directed_edges
    undirected = np.sort(directed, axis=1)
    uniq, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    report.open_edges = [tuple(int(x) for x in e) for e in uniq[counts == 1]]
    report.nonmanifold_edges = [tuple(int(x) for x in e) for e in uniq[counts > 2]]

    # On a consistently oriented closed surface each directed edge occurs once.
    duniq, dinv, dcounts = np.unique(directed, axis=0, return_inverse=True, return_counts=True)
    dinv = dinv.ravel()
    clash = (dcounts[dinv] > 1) & (counts[inverse] == 2)
    if clash.any():
        nt = mesh.n_triangles
        per_tri = np.bincount(np.arange(3 * nt)[clash] % nt, minlength=nt)
        worst = per_tri.max()
        report.misoriented_triangles = [int(i) for i in np.flatnonzero(per_tri == worst)]

    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    diag2 = float(np.sum((hi - lo) ** 2))
    report.degenerate_triangles = [int(i) for i in np.flatnonzero(mesh.areas < DEGENERATE_AREA * diag2)]
    report.volume = _signed_volume(mesh)
    report.area = mesh.surface_area
    report.h = mesh.h
    return report


def check(mesh: SurfaceMesh) -> SurfaceMesh:
    """Raise :class:`MeshError` unless every invariant holds."""
    report = validate(mesh)
    if not report.ok:
        raise MeshError("; ".join(report.errors()))
    return mesh


def _signed_volume(mesh: SurfaceMesh) -> float:
    return float(np.sum(np.einsum("ij,ij->i", mesh.centroids, mesh.normals) * mesh.areas) / 3.0)


def enclosed_volume(mesh: SurfaceMesh) -> float:
    """Divergence-theorem volume of a closed mesh."""
    report = validate(mesh)
    if report.open_edges or report.nonmanifold_edges:
        raise MeshError("; ".join(report.errors()))
    return report.volume


def volume_centroid(mesh: SurfaceMesh) -> np.ndarray:
    """Centroid of the enclosed solid, int_B x dV / |B|.

    Uses int_B x_j dV = 1/2 int_Gamma x_j^2 n_j dS with the edge-midpoint
    rule, which is exact for the quadratic integrand on flat panels.
    """
    c = mesh.corners
    mids = 0.5 * (c + np.roll(c, -1, axis=1))
    sq = (mids ** 2).mean(axis=1)
    moment = 0.5 * np.sum(sq * mesh.normals * mesh.areas[:, None], axis=0)
    return moment / _signed_volume(mesh)


def project_to_surface(points: np.ndarray, surface: Optional[dict]) -> np.ndarray:
    if surface is None:
        return points
    center = np.asarray(surface.get("center", (0.0, 0.0, 0.0)), dtype=float)
    p = points - center
    kind = surface["type"]
    if kind == "sphere":
        scale = surface["radius"] / np.linalg.norm(p, axis=1)
    elif kind == "ellipsoid":
        axes = np.asarray(surface["axes"], dtype=float)
        scale = 1.0 / np.sqrt(np.sum((p / axes) ** 2, axis=1))
    else:
        raise MeshError(f"unknown surface type {kind!r}")
    return center + p * scale[:, None]


class _Midpoints:
    """Edge -> midpoint vertex registry shared by the refinement routines."""

    def __init__(self, vertices, surface):
        self.vertices = [v for v in vertices]
        self.n0 = len(vertices)
        self.surface = surface
        self.index = {}

    def get(self, a, b):
        key = (a, b) if a < b else (b, a)
        m = self.index.get(key)
        if m is None:
            m = len(self.vertices)
            self.vertices.append(0.5 * (self.vertices[a] + self.vertices[b]))
            self.index[key] = m
        return m

    def array(self):
        v = np.array(self.vertices)
        if len(v) > self.n0 and self.surface is not None:
            v[self.n0:] = project_to_surface(v[self.n0:], self.surface)
        return v


def _red_children(t, mids):
    a, b, c = t
    ab, bc, ca = mids.get(a, b), mids.get(b, c), mids.get(c, a)
    return [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]


def uniform_refine(mesh: SurfaceMesh) -> SurfaceMesh:
    """Split every triangle into four through its edge midpoints."""
    tri = mesh.triangles
    edges = mesh.edges
    nv = mesh.n_vertices
    # Vectorised midpoint numbering: one new vertex per unique edge.
    key = edges[:, 0] * nv + edges[:, 1]
    order = np.argsort(key)
    skey = key[order]

    def mid(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return nv + order[np.searchsorted(skey, lo * nv + hi)]

    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    new_tri = np.stack([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)], axis=1).reshape(-1, 3)
    newv = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    newv = project_to_surface(newv, mesh.surface)
    verts = np.concatenate([mesh.vertices, newv])
    parent = np.repeat(np.arange(len(tri)), 4)
    return SurfaceMesh(verts, new_tri, mesh.surface, parent, None, mesh.level + 1)


def local_refine(mesh: SurfaceMesh, marked: Iterable[int]) -> SurfaceMesh:
    """Red refinement of ``marked`` with green closure.

    Green pairs are merged back into their parents before anything else, so
    a green triangle is never refined: if it is marked, its parent is
    red-refined instead.  Closure turns every triangle with two split edges,
    or with a split half-edge, red; triangles left with one split edge are
    bisected (green).  The output is conforming.
    """
    marked = {int(i) for i in marked}
    if not marked:
        return mesh
    nt = mesh.n_triangles
    if min(marked) < 0 or max(marked) >= nt:
        raise IndexError("marked triangle index out of range")
    if len(marked) == nt and not (mesh.green[:, 0] >= 0).any():
        return uniform_refine(mesh)

    mids = _Midpoints(mesh.vertices, mesh.surface)
    leaves = {}
    leaf_of = np.empty(nt, dtype=np.int64)
    groups = {}
    for i in range(nt):
        g = mesh.green[i]
        if g[0] < 0:
            leaves[i] = (tuple(int(x) for x in mesh.triangles[i]), i)
            leaf_of[i] = i
        else:
            groups.setdefault(tuple(int(x) for x in g), []).append(i)
    for gp, members in groups.items():
        sets = [set(int(x) for x in mesh.triangles[i]) for i in members]
        (m,) = set.intersection(*sets) - set(gp)
        apex = [v for v in gp if all(v in s for s in sets)][0]
        x, y = [v for v in gp if v != apex]
        mids.index[(min(x, y), max(x, y))] = m
        leaves[members[0]] = (gp, members[0])
        leaf_of[members] = members[0]

    next_id = nt

    def refine(leaf):
        nonlocal next_id
        t, src = leaves.pop(leaf)
        for child in _red_children(t, mids):
            leaves[next_id] = (child, src)
            next_id += 1

    for leaf in {int(leaf_of[i]) for i in marked}:
        refine(leaf)

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def split_edges(t):
        out = []
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            m = mids.index.get(key(a, b))
            if m is not None:
                out.append((a, b, m))
        return out

    changed = True
    while changed:
        changed = False
        for leaf in list(leaves):
            t = leaves[leaf][0]
            s = split_edges(t)
            deep = any(key(a, m) in mids.index or key(m, b) in mids.index for a, b, m in s)
            if len(s) >= 2 or deep:
                refine(leaf)
                changed = True

    new_tris, parents, greens = [], [], []
    for t, src in leaves.values():
        s = split_edges(t)
        if not s:
            new_tris.append(t)
            parents.append(src)
            greens.append((-1, -1, -1))
            continue
        a, b, m = s[0]
        c = [v for v in t if v != a and v != b][0]
        new_tris += [(a, m, c), (m, b, c)]
        parents += [src, src]
        greens += [t, t]

    verts = mids.array()
    tri = np.array(new_tris, dtype=np.int64)
    return SurfaceMesh(verts, tri, mesh.surface, np.array(parents), np.array(greens), mesh.level + 1)
