"""Numba kernels for flat-triangle Laplace integrals.

Conventions: triangles are given by three vertices ordered counter-clockwise
about the unit normal ``n``.  ``solid_angle(p, a, b, c)`` returns
``int_T (y - p).n / |y - p|^3 dy``, positive when ``p`` lies behind the
triangle.  ``triangle_potential`` returns ``int_T 1/|y - p| dy``.
"""

import math

import numba as nb
import numpy as np

FOUR_PI = 4.0 * math.pi


@nb.njit(cache=True, nogil=True)
def solid_angle(px, py, pz, v):
    r1x, r1y, r1z = v[0, 0] - px, v[0, 1] - py, v[0, 2] - pz
    r2x, r2y, r2z = v[1, 0] - px, v[1, 1] - py, v[1, 2] - pz
    r3x, r3y, r3z = v[2, 0] - px, v[2, 1] - py, v[2, 2] - pz
    d1 = math.sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    d2 = math.sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    d3 = math.sqrt(r3x * r3x + r3y * r3y + r3z * r3z)
    trip = (r1x * (r2y * r3z - r2z * r3y) + r1y * (r2z * r3x - r2x * r3z)
            + r1z * (r2x * r3y - r2y * r3x))
    den = (d1 * d2 * d3 + (r1x * r2x + r1y * r2y + r1z * r2z) * d3
           + (r1x * r3x + r1y * r3y + r1z * r3z) * d2
           + (r2x * r3x + r2y * r3y + r2z * r3z) * d1)
    return 2.0 * math.atan2(trip, den)


@nb.njit(cache=True, nogil=True)
def triangle_potential(px, py, pz, v, n):
    # int_T 1/R = sum_e (rho.m_e) int_e 1/R dl - h * Omega
    h = n[0] * (v[0, 0] - px) + n[1] * (v[0, 1] - py) + n[2] * (v[0, 2] - pz)
    acc = 0.0
    for e in range(3):
        f = (e + 1) % 3
        sx = v[f, 0] - v[e, 0]
        sy = v[f, 1] - v[e, 1]
        sz = v[f, 2] - v[e, 2]
        ln = math.sqrt(sx * sx + sy * sy + sz * sz)
        sx /= ln
        sy /= ln
        sz /= ln
        mx = sy * n[2] - sz * n[1]
        my = sz * n[0] - sx * n[2]
        mz = sx * n[1] - sy * n[0]
        rax, ray, raz = v[e, 0] - px, v[e, 1] - py, v[e, 2] - pz
        rbx, rby, rbz = v[f, 0] - px, v[f, 1] - py, v[f, 2] - pz
        dm = rax * mx + ray * my + raz * mz
        if dm == 0.0:
            continue
        ra = math.sqrt(rax * rax + ray * ray + raz * raz)
        rb = math.sqrt(rbx * rbx + rby * rby + rbz * rbz)
        ta = rax * sx + ray * sy + raz * sz
        tb = rbx * sx + rby * sy + rbz * sz
        if ta + tb > 0.0:
            lg = math.log((rb + tb) / (ra + ta))
        else:
            lg = math.log((ra - ta) / (rb - tb))
        acc += dm * lg
    if h != 0.0:
        acc -= h * solid_angle(px, py, pz, v)
    return acc


@nb.njit(cache=True, nogil=True)
def self_integral(v):
    """Closed form of int_T int_T 1/|x - y| dy dx for a flat triangle."""
    a = math.sqrt((v[1, 0] - v[2, 0]) ** 2 + (v[1, 1] - v[2, 1]) ** 2 + (v[1, 2] - v[2, 2]) ** 2)
    b = math.sqrt((v[2, 0] - v[0, 0]) ** 2 + (v[2, 1] - v[0, 1]) ** 2 + (v[2, 2] - v[0, 2]) ** 2)
    c = math.sqrt((v[0, 0] - v[1, 0]) ** 2 + (v[0, 1] - v[1, 1]) ** 2 + (v[0, 2] - v[1, 2]) ** 2)
    s = 0.5 * (a + b + c)
    area = math.sqrt(max(s * (s - a) * (s - b) * (s - c), 0.0))
    t = (math.log(((a + b) ** 2 - c * c) / (b * b - (c - a) ** 2)) / a
         + math.log(((b + c) ** 2 - a * a) / (c * c - (a - b) ** 2)) / b
         + math.log(((c + a) ** 2 - b * b) / (a * a - (b - c) ** 2)) / c)
    return 4.0 * area * area / 3.0 * t


@nb.njit(cache=True, nogil=True)
def _map_points(v, ref, out):
    for q in range(ref.shape[0]):
        s = ref[q, 0]
        t = ref[q, 1]
        for d in range(3):
            out[q, d] = v[0, d] + s * (v[1, d] - v[0, d]) + t * (v[2, d] - v[0, d])


@nb.njit(cache=True)
def single_layer_semianalytic(verts, tris, normals, areas, pairs, ref, wts):
    """V entries with an outer rule on the first triangle and the exact
    potential of the second.  Coincident pairs use the closed form."""
    npair = pairs.shape[0]
    out = np.empty(npair)
    pts = np.empty((ref.shape[0], 3))
    vi = np.empty((3, 3))
    vj = np.empty((3, 3))
    for k in range(npair):
        i = pairs[k, 0]
        j = pairs[k, 1]
        for a in range(3):
            for d in range(3):
                vi[a, d] = verts[tris[i, a], d]
                vj[a, d] = verts[tris[j, a], d]
        if i == j:
            out[k] = self_integral(vi) / FOUR_PI
            continue
        _map_points(vi, ref, pts)
        acc = 0.0
        for q in range(ref.shape[0]):
            acc += wts[q] * triangle_potential(pts[q, 0], pts[q, 1], pts[q, 2], vj, normals[j])
        out[k] = acc * 2.0 * areas[i] / FOUR_PI
    return out


@nb.njit(cache=True)
def adjoint_double_layer_semianalytic(verts, tris, areas, pairs, ref, wts, sign):
    """K* entries as (sign/4pi) int_{T_j} Omega_{T_i}(y) dy.

    The inner integral over the test triangle is the exact solid angle, so
    flat self-pairs vanish identically."""
    npair = pairs.shape[0]
    out = np.empty(npair)
    pts = np.empty((ref.shape[0], 3))
    vi = np.empty((3, 3))
    vj = np.empty((3, 3))
    for k in range(npair):
        i = pairs[k, 0]
        j = pairs[k, 1]
        if i == j:
            out[k] = 0.0
            continue
        for a in range(3):
            for d in range(3):
                vi[a, d] = verts[tris[i, a], d]
                vj[a, d] = verts[tris[j, a], d]
        _map_points(vj, ref, pts)
        acc = 0.0
        for q in range(ref.shape[0]):
            acc += wts[q] * solid_angle(pts[q, 0], pts[q, 1], pts[q, 2], vi)
        out[k] = sign * acc * 2.0 * areas[j] / FOUR_PI
    return out


@nb.njit(cache=True)
def regular_pairs(verts, tris, normals, areas, pairs, ref, wts, sign):
    """Tensor Gauss rule on both panels; returns (V, K*) entries."""
    npair = pairs.shape[0]
    nq = ref.shape[0]
    vout = np.empty(npair)
    kout = np.empty(npair)
    pi = np.empty((nq, 3))
    pj = np.empty((nq, 3))
    vi = np.empty((3, 3))
    vj = np.empty((3, 3))
    for k in range(npair):
        i = pairs[k, 0]
        j = pairs[k, 1]
        for a in range(3):
            for d in range(3):
                vi[a, d] = verts[tris[i, a], d]
                vj[a, d] = verts[tris[j, a], d]
        _map_points(vi, ref, pi)
        _map_points(vj, ref, pj)
        sv = 0.0
        sk = 0.0
        for p in range(nq):
            for q in range(nq):
                dx = pi[p, 0] - pj[q, 0]
                dy = pi[p, 1] - pj[q, 1]
                dz = pi[p, 2] - pj[q, 2]
                r2 = dx * dx + dy * dy + dz * dz
                ir = 1.0 / math.sqrt(r2)
                w = wts[p] * wts[q]
                sv += w * ir
                sk += w * (dx * normals[i, 0] + dy * normals[i, 1] + dz * normals[i, 2]) * ir * ir * ir
        scale = 4.0 * areas[i] * areas[j] / FOUR_PI
        vout[k] = sv * scale
        kout[k] = sign * sk * scale
    return vout, kout


@nb.njit(cache=True)
def panel_points(verts, tris, areas, ref, wts):
    """Quadrature nodes (n*q, 3) and absolute weights (n*q,) of every panel."""
    n = tris.shape[0]
    q = ref.shape[0]
    pts = np.empty((n * q, 3))
    w = np.empty(n * q)
    v = np.empty((3, 3))
    sub = np.empty((q, 3))
    for i in range(n):
        for a in range(3):
            for d in range(3):
                v[a, d] = verts[tris[i, a], d]
        _map_points(v, ref, sub)
        for p in range(q):
            for d in range(3):
                pts[i * q + p, d] = sub[p, d]
            w[i * q + p] = 2.0 * areas[i] * wts[p]
    return pts, w


@nb.njit(cache=True, parallel=True, fastmath=True)
def farfield_dense(pts, w, normals, q, sign, vout, kout):
    """Fill dense V and/or K* with the panel point rule (diagonal zero).

    ``vout``/``kout`` are preallocated (n, n) arrays of any float dtype, or
    (0, 0) when that operator is not wanted."""
    n = normals.shape[0]
    want_v = vout.shape[0] > 0
    want_k = kout.shape[0] > 0
    for i in nb.prange(n):
        nx = normals[i, 0]
        ny = normals[i, 1]
        nz = normals[i, 2]
        for j in range(n):
            if i == j:
                if want_v:
                    vout[i, j] = 0.0
                if want_k:
                    kout[i, j] = 0.0
                continue
            sv = 0.0
            sk = 0.0
            for a in range(q):
                ia = i * q + a
                for b in range(q):
                    jb = j * q + b
                    dx = pts[ia, 0] - pts[jb, 0]
                    dy = pts[ia, 1] - pts[jb, 1]
                    dz = pts[ia, 2] - pts[jb, 2]
                    ir = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
                    ww = w[ia] * w[jb]
                    if want_k:
                        sk += ww * (dx * nx + dy * ny + dz * nz) * ir * ir * ir
                    else:
                        sv += ww * ir
            if want_v:
                if want_k:
                    # both requested: second pass keeps the common case branch-free
                    for a in range(q):
                        ia = i * q + a
                        for b in range(q):
                            jb = j * q + b
                            dx = pts[ia, 0] - pts[jb, 0]
                            dy = pts[ia, 1] - pts[jb, 1]
                            dz = pts[ia, 2] - pts[jb, 2]
                            sv += w[ia] * w[jb] / math.sqrt(dx * dx + dy * dy + dz * dz)
                vout[i, j] = sv / FOUR_PI
            if want_k:
                kout[i, j] = sign * sk / FOUR_PI
    return vout, kout


@nb.njit(cache=True, fastmath=True)
def _far_row(px, py, pz, nx, ny, nz, sx, sy, sz, wx, lo, hi, want_v, acc):
    # accumulate point source contributions jb in [lo, hi) into acc[0:m] (V) or (K*)
    m = wx.shape[1]
    if want_v:
        for jb in range(lo, hi):
            dx = px - sx[jb]
            dy = py - sy[jb]
            dz = pz - sz[jb]
            ir = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
            for c in range(m):
                acc[c] += wx[jb, c] * ir
    else:
        for jb in range(lo, hi):
            dx = px - sx[jb]
            dy = py - sy[jb]
            dz = pz - sz[jb]
            ir = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
            g = (dx * nx + dy * ny + dz * nz) * ir * ir * ir
            for c in range(m):
                acc[c] += wx[jb, c] * g


@nb.njit(cache=True, parallel=True, fastmath=True)
def farfield_matvec(pts, w, normals, q, x, sign, want_v, want_k):
    """Matrix-free point-rule products V_f @ x and K*_f @ x, x of shape (n, m)."""
    n = normals.shape[0]
    m = x.shape[1]
    npt = n * q
    wx = np.empty((npt, m))
    for jb in range(npt):
        for c in range(m):
            wx[jb, c] = w[jb] * x[jb // q, c]
    sx = np.ascontiguousarray(pts[:, 0])
    sy = np.ascontiguousarray(pts[:, 1])
    sz = np.ascontiguousarray(pts[:, 2])
    yv = np.zeros((n, m))
    yk = np.zeros((n, m))
    for i in nb.prange(n):
        nx = normals[i, 0]
        ny = normals[i, 1]
        nz = normals[i, 2]
        tv = np.zeros(m)
        tk = np.zeros(m)
        acc = np.zeros(m)
        for a in range(q):
            ia = i * q + a
            for flag in range(2):
                if (flag == 0 and not want_v) or (flag == 1 and not want_k):
                    continue
                acc[:] = 0.0
                _far_row(sx[ia], sy[ia], sz[ia], nx, ny, nz, sx, sy, sz, wx, 0, i * q, flag == 0, acc)
                _far_row(sx[ia], sy[ia], sz[ia], nx, ny, nz, sx, sy, sz, wx, (i + 1) * q, npt, flag == 0, acc)
                for c in range(m):
                    if flag == 0:
                        tv[c] += w[ia] * acc[c]
                    else:
                        tk[c] += w[ia] * acc[c]
        for c in range(m):
            yv[i, c] = tv[c] / FOUR_PI
            yk[i, c] = sign * tk[c] / FOUR_PI
    return yv, yk


@nb.njit(cache=True, parallel=True, fastmath=True)
def matvec_mixed(a, x):
    """``a @ x`` for a float32 matrix with float64 accumulation."""
    n = a.shape[0]
    m = x.shape[1]
    y = np.zeros((n, m))
    for i in nb.prange(n):
        acc = np.zeros(m)
        for j in range(a.shape[1]):
            aij = np.float64(a[i, j])
            for c in range(m):
                acc[c] += aij * x[j, c]
        for c in range(m):
            y[i, c] = acc[c]
    return y


@nb.njit(cache=True)
def point_potential(verts, tris, normals, density, points):
    """Pointwise S[density](x) with exact panel integrals."""
    out = np.zeros(points.shape[0])
    vj = np.empty((3, 3))
    for j in range(tris.shape[0]):
        if density[j] == 0.0:
            continue
        for a in range(3):
            for d in range(3):
                vj[a, d] = verts[tris[j, a], d]
        for p in range(points.shape[0]):
            out[p] += density[j] * triangle_potential(points[p, 0], points[p, 1], points[p, 2], vj, normals[j])
    return out / FOUR_PI
