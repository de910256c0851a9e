"""Densities, polarizability tensors and their analytic references.

The densities solve the second-kind equation ``(lambda M + K*) phi_i = b_i``
with ``b_i[T] = area_T (n_T)_i`` and ``lambda = (k + 1) / (2 (k - 1))``.
Three tensor formulas are evaluated from them:

``lp``
    ``T_ij = alpha^3 sum_T phi_i[T] int_T (xi - x_B)_j``, first moments of
    the density about the volume centroid ``x_B`` of B.
``bi``
    ``T_ij = alpha^3 (k - 1) (|B| delta_ij - int_Gamma S[phi_i] n_j)``,
    written through ``psi_i = S[phi_i] / (r - 1)`` with ``r = 1 / k``.
``weighted``
    ``beta * bi + (1 - beta) * lp``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy import integrate
from scipy.sparse.linalg import LinearOperator, gmres

from .mesh import SurfaceMesh, enclosed_volume, volume_centroid
from .operators import (DEFAULT_QUADRATURE, SIGN, MatrixFreeOperator, QuadratureConfig,
                        far_matrix, near_field)

#: Largest system solved by dense LU; GMRES takes over above it.
LU_LIMIT = 6000
#: Largest system for which the far part of K* is stored (in single precision),
#: provided that matrix also fits in half of the available memory.
DENSE_LIMIT = 26000
#: Relative residual required of every density solve.
RTOL = 1e-10

FORMULATIONS = ("lp", "bi", "weighted", "analytic", "reference")


class PSTError(ValueError):
    """Invalid contrast/scale parameters or a failed density solve."""


@dataclass(frozen=True)
class ContrastParams:
    """Conductivity contrast ``k`` and object scale ``alpha`` (metres)."""

    k: float
    alpha: float = 0.01

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise PSTError(f"contrast k must be positive and finite, got {self.k!r}")
        if abs(self.k - 1.0) < 1e-6:
            raise PSTError(f"degenerate contrast k = {self.k!r}: lambda is undefined at k = 1")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise PSTError(f"scale alpha must be positive, got {self.alpha!r}")

    @property
    def lam(self) -> float:
        return (self.k + 1.0) / (2.0 * (self.k - 1.0))

    @property
    def r(self) -> float:
        return 1.0 / self.k


@dataclass(frozen=True, eq=False)
class DensitySolution:
    """Densities ``phi[i]`` and ``psi[i]`` (shape (3, N)) on ``mesh``."""

    mesh: SurfaceMesh
    params: ContrastParams
    phi: np.ndarray
    psi: np.ndarray
    residual: float
    iterations: int
    method: str
    volume: float
    center: np.ndarray


@dataclass(frozen=True, eq=False)
class PolarizabilityTensor:
    """A 3x3 tensor in m^3 with the formula that produced it."""

    values: np.ndarray
    formulation: str
    alpha: float = float("nan")
    k: float = float("nan")
    beta: Optional[float] = None
    symmetrized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (3, 3):
            raise PSTError(f"tensor must be 3x3, got shape {v.shape}")
        if self.formulation not in FORMULATIONS:
            raise PSTError(f"unknown formulation {self.formulation!r}")
        if self.symmetrized and not np.array_equal(v, v.T):
            raise PSTError("tensor flagged symmetrized is not symmetric")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values.astype(dtype) if dtype is not None else self.values.copy()

    def to_dict(self) -> dict:
        return {
            "tensor": self.values.tolist(),
            "alpha": self.alpha,
            "k": self.k,
            "beta": self.beta,
            "formulation": self.formulation,
            "symmetrized": self.symmetrized,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolarizabilityTensor":
        return cls(np.asarray(doc["tensor"], dtype=float), doc["formulation"],
                   float(doc.get("alpha", float("nan"))), float(doc.get("k", float("nan"))),
                   doc.get("beta"), bool(doc.get("symmetrized", False)))


def _values(t) -> np.ndarray:
    return t.values if isinstance(t, PolarizabilityTensor) else np.asarray(t, dtype=float)


# ---------------------------------------------------------------- solve


def rhs(mesh: SurfaceMesh) -> np.ndarray:
    """Galerkin data (N, 3): column i holds area_T * (n_T)_i."""
    return mesh.areas[:, None] * mesh.normals


def _available_memory() -> float:
    try:
        return float(os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE"))
    except (ValueError, OSError, AttributeError):
        return float("inf")


def _choose(n: int, method: str) -> str:
    if method == "auto":
        if n <= LU_LIMIT:
            return "lu"
        fits = 4.0 * n * n < 0.5 * _available_memory()
        return "gmres" if n <= DENSE_LIMIT and fits else "gmres-matrix-free"
    if method not in ("lu", "gmres", "gmres-matrix-free"):
        raise PSTError(f"unknown solver method {method!r}")
    return method


def _gmres(apply, b, rtol, x0=None):
    """GMRES on the three systems at once as one block-diagonal system."""
    n = b.shape[0]

    def mv(x):
        return apply(x.reshape(3, n).T).T.ravel()

    op = LinearOperator((3 * n, 3 * n), matvec=mv, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    start = None if x0 is None else x0.T.ravel()
    x, info = gmres(op, b.T.ravel(), x0=start, rtol=rtol, atol=0.0, restart=200, maxiter=20,
                    callback=cb, callback_type="pr_norm")
    if info < 0:
        raise PSTError(f"GMRES breakdown (info={info})")
    return x.reshape(3, n).T, count[0]


def solve_densities(mesh: SurfaceMesh, params: ContrastParams,
                    quad: QuadratureConfig = DEFAULT_QUADRATURE, method: str = "auto",
                    rtol: float = RTOL) -> DensitySolution:
    """Solve ``(lambda M + K*) phi_i = b_i`` and derive ``psi_i``.

    ``psi_i = M^{-1} V phi_i / (r - 1)`` is the Galerkin projection of the
    single-layer potential of ``phi_i``.

    Raises
    ------
    PSTError
        If the relative residual of any of the three solves exceeds ``rtol``.
    """
    n = mesh.n_triangles
    method = _choose(n, method)
    lam = params.lam
    areas = mesh.areas
    b = rhs(mesh)
    nf = near_field(mesh, quad, SIGN, True, True)
    iterations = 0
    if method == "lu":
        kmat = far_matrix(mesh, quad, SIGN, "adjoint_double_layer")
        kmat[nf.rows, nf.cols] = nf.k
        kmat[np.diag_indices(n)] += lam * areas

        def apply(x):
            return kmat @ x

        try:
            lu = sla.lu_factor(kmat, check_finite=False)
        except sla.LinAlgError as exc:
            raise PSTError(f"density system is singular: {exc}") from exc
        phi = sla.lu_solve(lu, b, check_finite=False)
    else:
        storage = "float32" if method == "gmres" else "none"
        kop = MatrixFreeOperator(mesh, "adjoint_double_layer", quad, near=nf, storage=storage)

        def apply(x):
            return lam * areas[:, None] * x + kop @ x

        # Rows scaled by 1 / area (mass preconditioning) keep the second-kind
        # conditioning on strongly graded meshes.  Convergence is judged on
        # the unscaled residual; the inner tolerance is tightened if needed.
        def scaled(x):
            return apply(x) / areas[:, None]

        phi, inner = None, rtol * 0.5
        for _ in range(4):
            phi, its = _gmres(scaled, b / areas[:, None], inner, phi)
            iterations += its
            res = np.linalg.norm(apply(phi) - b, axis=0) / np.linalg.norm(b, axis=0)
            if res.max() <= rtol:
                break
            inner *= 0.1
    res = np.linalg.norm(apply(phi) - b, axis=0) / np.linalg.norm(b, axis=0)
    if not np.all(np.isfinite(phi)) or res.max() > rtol:
        cond = np.linalg.cond(apply(np.eye(n)), 1) if n <= LU_LIMIT else float("nan")
        raise PSTError(f"density solve did not reach relative residual {rtol:g} "
                       f"(got {res.max():.3g}, 1-norm condition estimate {cond:.3g})")
    vop = MatrixFreeOperator(mesh, "single_layer", quad, near=nf)
    psi = (vop @ phi) / areas[:, None] / (params.r - 1.0)
    return DensitySolution(mesh, params, np.ascontiguousarray(phi.T), np.ascontiguousarray(psi.T),
                           float(res.max()), int(iterations), method, enclosed_volume(mesh),
                           volume_centroid(mesh))


# ---------------------------------------------------------------- tensors


def lp_tensor(sol: DensitySolution) -> PolarizabilityTensor:
    """Layer-potential tensor from first moments of ``phi``."""
    m = sol.mesh
    moments = m.areas[:, None] * (m.centroids - sol.center)
    t = sol.params.alpha ** 3 * (sol.phi @ moments)
    return PolarizabilityTensor(t, "lp", sol.params.alpha, sol.params.k, 0.0)


def bi_tensor(sol: DensitySolution) -> PolarizabilityTensor:
    """Boundary-integral tensor from the volume and normal moments of ``psi``."""
    m = sol.mesh
    k = sol.params.k
    flux = sol.psi @ (m.areas[:, None] * m.normals)
    t = sol.params.alpha ** 3 * ((k - 1.0) * sol.volume * np.eye(3) + (k - 1.0) ** 2 / k * flux)
    return PolarizabilityTensor(t, "bi", sol.params.alpha, k, 1.0)


def combine(lp: PolarizabilityTensor, bi: PolarizabilityTensor, beta: float) -> PolarizabilityTensor:
    """``beta * bi + (1 - beta) * lp`` with exact endpoints."""
    if not 0.0 <= beta <= 1.0:
        raise PSTError(f"beta must lie in [0, 1], got {beta!r}")
    if beta == 0.0:
        t = lp.values
    elif beta == 1.0:
        t = bi.values
    else:
        t = beta * bi.values + (1.0 - beta) * lp.values
    return PolarizabilityTensor(t, "weighted", lp.alpha, lp.k, float(beta))


def weighted_tensor(sol: DensitySolution, beta: float) -> PolarizabilityTensor:
    return combine(lp_tensor(sol), bi_tensor(sol), beta)


def symmetrize(t: PolarizabilityTensor) -> PolarizabilityTensor:
    v = _values(t)
    s = 0.5 * (v + v.T)
    if isinstance(t, PolarizabilityTensor):
        return PolarizabilityTensor(s, t.formulation, t.alpha, t.k, t.beta, True, dict(t.meta))
    return PolarizabilityTensor(s, "reference", symmetrized=True)


# ---------------------------------------------------------------- analytic


def _k_alpha(params):
    """``(k, alpha)`` from :class:`ContrastParams` or a plain pair.

    The closed forms stay valid at ``k = 1`` (zero tensor), which
    :class:`ContrastParams` rejects, so a pair is accepted as well.
    """
    if isinstance(params, ContrastParams):
        return params.k, params.alpha
    k, alpha = (float(x) for x in params)
    if not (k > 0 and alpha > 0):
        raise PSTError(f"need k > 0 and alpha > 0, got k = {k!r}, alpha = {alpha!r}")
    return k, alpha


def analytic_sphere(params, radius: float = 1.0) -> PolarizabilityTensor:
    """Ball of ``radius``: ``alpha^3 4 pi radius^3 (k - 1) / (k + 2) I``.

    ``params`` is a :class:`ContrastParams` or a ``(k, alpha)`` pair.
    """
    if not radius > 0:
        raise PSTError("radius must be positive")
    k, alpha = _k_alpha(params)
    t = alpha ** 3 * radius ** 3 * 4.0 * math.pi * (k - 1.0) / (k + 2.0) * np.eye(3)
    return PolarizabilityTensor(t, "analytic", alpha, k, None, True)


def depolarization_factors(a: float, b: float, c: float) -> np.ndarray:
    """Depolarization factors ``L_i`` of the ellipsoid with semi-axes a >= b >= c."""
    if not 0 < c <= b <= a:
        raise PSTError(f"ellipsoid axes must satisfy 0 < c <= b <= a, got {(a, b, c)}")
    out = np.empty(3)
    for i, ai in enumerate((a, b, c)):
        def f(s, ai=ai):
            return 1.0 / ((s + ai * ai) * math.sqrt((s + a * a) * (s + b * b) * (s + c * c)))
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
        out[i] = 0.5 * a * b * c * val
    if abs(out.sum() - 1.0) > 1e-10:
        raise PSTError(f"depolarization factors sum to {out.sum():.15g}, expected 1")
    return out


def analytic_ellipsoid(params, a: float, b: float, c: float) -> PolarizabilityTensor:
    """Diagonal tensor of the ellipsoid in its principal frame.

    ``T = alpha^3 |B| (k - 1) diag(1 / (1 + L_i (k - 1)))`` with the
    depolarization factors ``L_i``.
    """
    lf = depolarization_factors(a, b, c)
    k, alpha = _k_alpha(params)
    vol = 4.0 * math.pi * a * b * c / 3.0
    t = alpha ** 3 * vol * (k - 1.0) * np.diag(1.0 / (1.0 + lf * (k - 1.0)))
    return PolarizabilityTensor(t, "analytic", alpha, k, None, True)


# ---------------------------------------------------------------- metrics


def perturbation_leading_order(t, z, x, grad_u0) -> float:
    """Leading field perturbation ``grad_x G(x, z) . (T grad_u0)`` in volts."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x - z
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise PSTError("observation point coincides with the inclusion location")
    grad_g = -d / (4.0 * math.pi * r ** 3)
    return float(grad_g @ (_values(t) @ np.asarray(grad_u0, dtype=float)))


def _ref_norm(t_ref) -> float:
    n = float(np.linalg.norm(_values(t_ref)))
    if n == 0.0:
        raise PSTError("reference tensor is zero")
    return n


def relative_error(t, t_ref) -> float:
    """``||T_ref - T||_F / ||T_ref||_F``."""
    return float(np.linalg.norm(_values(t_ref) - _values(t))) / _ref_norm(t_ref)


def off_diagonal_error(t, t_ref) -> float:
    """Frobenius error of the off-diagonal parts relative to ``||T_ref||_F``."""
    off = ~np.eye(3, dtype=bool)
    diff = (_values(t_ref) - _values(t)) * off
    return float(np.linalg.norm(diff)) / _ref_norm(t_ref)
