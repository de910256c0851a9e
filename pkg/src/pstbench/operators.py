"""Galerkin boundary operators on piecewise-constant functions.

Entries are split into tiers by the centroid distance ``d`` of a panel pair
relative to the larger panel diameter ``D``:

* pairs sharing a vertex (including coincident pairs) are integrated with
  the exact inner panel integral and a vertex-graded outer rule;
* ``d < near_ratio * D``: exact inner integral, outer rule of ``near_order``;
* ``d < far_ratio * D``: tensor Gauss rule of ``regular_order`` on both panels;
* everything else: a fixed low-order rule on both panels (``far_order``).

The far rule is applied to every pair, either on the fly or into a stored
matrix, and the other tiers enter as a sparse correction on top of it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import kernels
from .mesh import SurfaceMesh
from .quadrature import triangle_rule, vertex_graded_rule

#: Orientation convention for K*: the kernel is SIGN * (x - y).n_x / (4 pi |x - y|^3).
#: With SIGN = -1 the degree-1 spherical harmonics are eigenfunctions with
#: eigenvalue -1/6 on the unit sphere, which is what reproduces the analytic
#: sphere tensor through (lambda I + K*) phi = n.
SIGN = -1.0

KINDS = ("single_layer", "adjoint_double_layer", "mass")


class OperatorError(ValueError):
    """Invalid quadrature settings or an operator used with the wrong mesh."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Panel-pair quadrature settings.

    Parameters
    ----------
    regular_order : int
        Polynomial degree of the triangle rule used on both panels of a
        well-separated pair.
    near_order : int
        Degree of the outer rule for near pairs (inner integral exact).
    singular_order : int
        Gauss points per direction of the vertex-graded outer rule used for
        pairs that share a vertex.
    near_ratio, far_ratio : float
        Tier thresholds on centroid distance / larger panel diameter.
    far_order : int
        Degree of the rule used on both panels of all remaining pairs.  The
        default degree 2 (three points) keeps the far-field error well below
        the discretisation error; degree 1 is the centroid rule.
    """

    regular_order: int = 3
    near_order: int = 6
    singular_order: int = 4
    near_ratio: float = 2.0
    far_ratio: float = 6.0
    far_order: int = 2
    singular_rule: str = "semi-analytic"

    def __post_init__(self):
        for name in ("regular_order", "near_order", "singular_order", "far_order"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise OperatorError(f"{name} must be an integer >= 1, got {value!r}")
        if not 0 < self.near_ratio <= self.far_ratio:
            raise OperatorError("need 0 < near_ratio <= far_ratio")
        if self.singular_rule != "semi-analytic":
            raise OperatorError(f"unknown singular rule {self.singular_rule!r}")


DEFAULT_QUADRATURE = QuadratureConfig()


@dataclass(frozen=True, eq=False)
class DenseOperatorMatrix:
    """Galerkin matrix bound to the mesh it was assembled on."""

    kind: str
    matrix: np.ndarray
    fingerprint: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise OperatorError(f"unknown operator kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise OperatorError("operator matrix must be square")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def check_mesh(self, mesh: SurfaceMesh) -> None:
        if mesh.fingerprint != self.fingerprint:
            raise OperatorError(f"{self.kind} matrix was assembled on a different mesh (fingerprint mismatch)")

    def __matmul__(self, x):
        return self.matrix @ x


# ---------------------------------------------------------------- near field


@dataclass(frozen=True, eq=False)
class NearField:
    """Ordered panel pairs that need more than the far rule.

    ``rows``/``cols`` index test/trial panels; ``v`` and ``k`` hold the
    accurate entries and ``v0``/``k0`` the far-rule values they replace.
    Coincident pairs are included.
    """

    rows: np.ndarray
    cols: np.ndarray
    v: np.ndarray
    k: np.ndarray
    v0: np.ndarray
    k0: np.ndarray

    def correction(self, n: int, which: str) -> sp.csr_matrix:
        delta = (self.v - self.v0) if which == "v" else (self.k - self.k0)
        return sp.csr_matrix((delta, (self.rows, self.cols)), shape=(n, n))


def _candidate_pairs(mesh: SurfaceMesh, ratio: float):
    """Ordered pairs (i, j), i != j, with centroid distance < ratio * max(D_i, D_j)."""
    cent = mesh.centroids
    diam = mesh.diameters
    tree = cKDTree(cent)
    hits = tree.query_ball_point(cent, ratio * diam, return_sorted=False)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    i = np.repeat(np.arange(len(hits)), lens)
    j = np.fromiter((x for h in hits for x in h), dtype=np.int64, count=int(lens.sum()))
    # symmetric closure: keep (i, j) if either ball contains the other centroid
    both = np.concatenate([i * len(cent) + j, j * len(cent) + i])
    both = np.unique(both)
    i, j = np.divmod(both, len(cent))
    keep = i != j
    return i[keep], j[keep]


def _shares_vertex(tris, i, j):
    a = tris[i][:, :, None]
    b = tris[j][:, None, :]
    return (a == b).any(axis=(1, 2))


def _mirror(pairs, upper, upper_vals, n):
    """Fill a symmetric pair list from the values of its i < j half."""
    ukey = pairs[upper, 0] * n + pairs[upper, 1]
    order = np.argsort(ukey)
    lower = ~upper
    lkey = pairs[lower, 1] * n + pairs[lower, 0]
    out = np.empty(len(pairs))
    out[upper] = upper_vals
    out[lower] = upper_vals[order[np.searchsorted(ukey[order], lkey)]]
    return out


def near_field(mesh: SurfaceMesh, quad: QuadratureConfig = DEFAULT_QUADRATURE,
               sign: float = SIGN, want_v: bool = True, want_k: bool = True) -> NearField:
    """Accurate entries for every pair outside the far tier."""
    n = mesh.n_triangles
    verts, tris = mesh.vertices, mesh.triangles
    normals, areas, cent = mesh.normals, mesh.areas, mesh.centroids
    diam = mesh.diameters
    ci, cj = _candidate_pairs(mesh, quad.far_ratio)
    d = np.linalg.norm(cent[ci] - cent[cj], axis=1)
    big = np.maximum(diam[ci], diam[cj])
    touch = _shares_vertex(tris, ci, cj)
    near = ~touch & (d < quad.near_ratio * big)
    regular = ~touch & ~near

    rows = np.concatenate([np.arange(n), ci])
    cols = np.concatenate([np.arange(n), cj])
    v = np.zeros(len(rows))
    k = np.zeros(len(rows))
    diag = np.arange(n)

    graded = vertex_graded_rule(quad.singular_order)
    outer = triangle_rule(quad.near_order)
    inner = triangle_rule(quad.regular_order)

    def sel(mask):
        return np.stack([ci[mask], cj[mask]], axis=1).astype(np.int64)

    off = n
    idx_touch = off + np.flatnonzero(touch)
    idx_near = off + np.flatnonzero(near)
    idx_reg = off + np.flatnonzero(regular)

    if want_v:
        dpairs = np.stack([diag, diag], axis=1).astype(np.int64)
        v[:n] = kernels.single_layer_semianalytic(verts, tris, normals, areas, dpairs, *graded)
        # V is symmetric: integrate each unordered singular/near pair once, then mirror.
        for mask, rule, idx in ((touch, graded, idx_touch), (near, outer, idx_near)):
            pairs = sel(mask)
            upper = pairs[:, 0] < pairs[:, 1]
            vals = kernels.single_layer_semianalytic(verts, tris, normals, areas, pairs[upper], *rule)
            v[idx] = _mirror(pairs, upper, vals, n)
    if want_k:
        k[idx_touch] = kernels.adjoint_double_layer_semianalytic(verts, tris, areas, sel(touch), *graded, sign)
        k[idx_near] = kernels.adjoint_double_layer_semianalytic(verts, tris, areas, sel(near), *outer, sign)
    if len(idx_reg):
        rv, rk = kernels.regular_pairs(verts, tris, normals, areas, sel(regular), *inner, sign)
        if want_v:
            pairs = sel(regular)
            upper = pairs[:, 0] < pairs[:, 1]
            v[idx_reg] = _mirror(pairs, upper, rv[upper], n)
        if want_k:
            k[idx_reg] = rk
    v0 = np.zeros(len(rows))
    k0 = np.zeros(len(rows))
    v0[n:], k0[n:] = _far_pairs(mesh, quad, sign, np.stack([ci, cj], 1))
    return NearField(rows, cols, v, k, v0, k0)


def _far_pairs(mesh, quad, sign, pairs):
    """Far-rule values of the given pairs, the same sums the dense fill uses."""
    return kernels.regular_pairs(mesh.vertices, mesh.triangles, mesh.normals, mesh.areas,
                                 pairs, *triangle_rule(quad.far_order), sign)


def _far_points(mesh, quad):
    ref, wts = triangle_rule(quad.far_order)
    pts, w = kernels.panel_points(mesh.vertices, mesh.triangles, mesh.areas, ref, wts)
    return pts, w, len(wts)


# ---------------------------------------------------------------- assembly


def assemble_mass(mesh: SurfaceMesh) -> DenseOperatorMatrix:
    """Diagonal Galerkin mass matrix: the triangle areas."""
    return DenseOperatorMatrix("mass", np.diag(mesh.areas), mesh.fingerprint)


def far_matrix(mesh: SurfaceMesh, quad: QuadratureConfig, sign: float, kind: str,
               dtype=np.float64) -> np.ndarray:
    """Dense far-rule matrix of V or K* (zero diagonal) in ``dtype``."""
    n = mesh.n_triangles
    pts, w, q = _far_points(mesh, quad)
    full = np.empty((n, n), dtype=dtype)
    empty = np.empty((0, 0), dtype=dtype)
    if kind == "single_layer":
        kernels.farfield_dense(pts, w, mesh.normals, q, sign, full, empty)
    else:
        kernels.farfield_dense(pts, w, mesh.normals, q, sign, empty, full)
    return full


def _dense(mesh, quad, sign, kind):
    want_v = kind == "single_layer"
    mat = far_matrix(mesh, quad, sign, kind)
    nf = near_field(mesh, quad, sign, want_v, not want_v)
    mat[nf.rows, nf.cols] = nf.v if want_v else nf.k
    return DenseOperatorMatrix(kind, mat, mesh.fingerprint)


def assemble_single_layer(mesh: SurfaceMesh, quad: QuadratureConfig = DEFAULT_QUADRATURE) -> DenseOperatorMatrix:
    """Dense V with V[T, T'] = int_T int_T' 1 / (4 pi |x - y|) dy dx."""
    return _dense(mesh, quad, SIGN, "single_layer")


def assemble_adjoint_double_layer(mesh: SurfaceMesh, quad: QuadratureConfig = DEFAULT_QUADRATURE,
                                  sign: float = SIGN) -> DenseOperatorMatrix:
    """Dense K* with K*[T, T'] = int_T int_T' sign (x - y).n_x / (4 pi |x - y|^3) dy dx."""
    if sign not in (1.0, -1.0):
        raise OperatorError("sign must be +1 or -1")
    return _dense(mesh, quad, float(sign), "adjoint_double_layer")


class MatrixFreeOperator:
    """V or K* as far-rule product plus sparse near-field correction.

    Parameters
    ----------
    storage : {"none", "float32"}
        ``"none"`` evaluates the far rule on the fly for every product;
        ``"float32"`` stores the far-rule matrix in single precision (half
        the memory of a dense double matrix) and accumulates products in
        double precision.  Near-field entries stay in double precision.
    """

    def __init__(self, mesh: SurfaceMesh, kind: str, quad: QuadratureConfig = DEFAULT_QUADRATURE,
                 sign: float = SIGN, near: NearField = None, storage: str = "none"):
        if kind not in ("single_layer", "adjoint_double_layer"):
            raise OperatorError(f"matrix-free product not available for {kind!r}")
        if storage not in ("none", "float32"):
            raise OperatorError(f"unknown storage {storage!r}")
        self.mesh = mesh
        self.kind = kind
        self.sign = float(sign)
        self.quad = quad
        self.fingerprint = mesh.fingerprint
        which = "v" if kind == "single_layer" else "k"
        if near is None:
            near = near_field(mesh, quad, sign, which == "v", which == "k")
        self.correction = near.correction(mesh.n_triangles, which)
        self._points = _far_points(mesh, quad)
        self.stored = far_matrix(mesh, quad, self.sign, kind, np.float32) if storage == "float32" else None

    @property
    def n(self) -> int:
        return self.mesh.n_triangles

    @property
    def shape(self):
        return (self.n, self.n)

    def check_mesh(self, mesh: SurfaceMesh) -> None:
        if mesh.fingerprint != self.fingerprint:
            raise OperatorError(f"{self.kind} operator was built on a different mesh (fingerprint mismatch)")

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ndim == 1
        xx = np.ascontiguousarray(x.reshape(self.n, -1))
        if self.stored is not None:
            y = kernels.matvec_mixed(self.stored, xx)
        else:
            pts, w, q = self._points
            want_v = self.kind == "single_layer"
            yv, yk = kernels.farfield_matvec(pts, w, self.mesh.normals, q, xx, self.sign, want_v, not want_v)
            y = yv if want_v else yk
        y = y + self.correction @ xx
        return y.ravel() if flat else y


def apply_single_layer(mesh: SurfaceMesh, x, quad: QuadratureConfig = DEFAULT_QUADRATURE):
    """V @ x without forming V."""
    return MatrixFreeOperator(mesh, "single_layer", quad) @ x


# ---------------------------------------------------------------- potentials


def _point_triangle_distance(p, tri):
    """Euclidean distance from points p (m, 3) to triangles tri (m, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1)[:, None]
    h = np.einsum("ij,ij->i", p - a, n)
    q = p - h[:, None] * n

    def inside_edge(u, w):
        return np.einsum("ij,ij->i", np.cross(w - u, q - u), n) >= 0

    inside = inside_edge(a, b) & inside_edge(b, c) & inside_edge(c, a)

    def seg(u, w):
        e = w - u
        t = np.clip(np.einsum("ij,ij->i", p - u, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        return np.linalg.norm(p - (u + t[:, None] * e), axis=1)

    edge = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    return np.where(inside, np.abs(h), edge)


def distance_to_surface(mesh: SurfaceMesh, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tree = cKDTree(mesh.centroids)
    kk = min(16, mesh.n_triangles)
    _, idx = tree.query(points, k=kk)
    idx = idx.reshape(len(points), kk)
    best = np.full(len(points), np.inf)
    for col in range(kk):
        best = np.minimum(best, _point_triangle_distance(points, mesh.corners[idx[:, col]]))
    # the nearest centroids need not own the nearest panel on graded meshes
    reach = best + mesh.diameters.max()
    far_enough = tree.query(points, k=1)[0] > reach
    if not far_enough.all():
        for p in np.flatnonzero(~far_enough):
            cand = tree.query_ball_point(points[p], reach[p])
            if cand:
                best[p] = _point_triangle_distance(np.repeat(points[p:p + 1], len(cand), 0),
                                                   mesh.corners[cand]).min()
    return best


def evaluate_single_layer_potential(mesh: SurfaceMesh, density, points, guard: float = None) -> np.ndarray:
    """Pointwise S[density](x) = sum_T density_T int_T 1/(4 pi |x - y|) dy.

    Parameters
    ----------
    density : (nt,) per-triangle values.
    points : (m, 3) evaluation points off the surface.
    guard : float, optional
        Minimal allowed distance to the surface; defaults to 1e-6 times the
        bounding-box diagonal.  On-surface values belong to the Galerkin
        path (:func:`apply_single_layer`).
    """
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_triangles,):
        raise OperatorError(f"density needs {mesh.n_triangles} entries, got {density.shape}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if guard is None:
        guard = 1e-6 * float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    dist = distance_to_surface(mesh, points)
    bad = np.flatnonzero(dist < guard)
    if len(bad):
        raise OperatorError(f"point {int(bad[0])} lies within the guard distance {guard:.3g} of the surface")
    return kernels.point_potential(mesh.vertices, mesh.triangles, mesh.normals, density, points)


# ---------------------------------------------------------------- matrix dump

_DUMP_MAGIC = b"PSTOP1\0\0"


def dump_matrix(op: DenseOperatorMatrix, path) -> Path:
    """Binary dump: magic, N (int64), kind (32 bytes ascii), N*N row-major float64."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<q", op.n))
        fh.write(op.kind.encode("ascii").ljust(32, b"\0"))
        fh.write(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes())
    return path


def load_matrix(path, fingerprint: str = "") -> DenseOperatorMatrix:
    data = Path(path).read_bytes()
    if data[:8] != _DUMP_MAGIC:
        raise OperatorError(f"{path} is not an operator dump")
    (n,) = struct.unpack("<q", data[8:16])
    kind = data[16:48].rstrip(b"\0").decode("ascii")
    mat = np.frombuffer(data[48:], dtype="<f8")
    if mat.size != n * n:
        raise OperatorError(f"{path}: expected {n * n} entries, found {mat.size}")
    return DenseOperatorMatrix(kind, mat.reshape(n, n).copy(), fingerprint)
