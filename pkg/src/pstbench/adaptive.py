"""Recovery-based error estimation, Doerfler marking and the refinement loops."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from .geometry import GeometrySpec, build_primitive
from .mesh import SurfaceMesh, local_refine, uniform_refine
from .operators import DEFAULT_QUADRATURE, QuadratureConfig
from .pst import (ContrastParams, DensitySolution, PolarizabilityTensor, PSTError, bi_tensor,
                  combine, lp_tensor, off_diagonal_error, relative_error, solve_densities,
                  symmetrize)
from .quadrature import triangle_rule

MODES = ("max", "sum")
CSV_COLUMNS = ("level", "elements", "ndof", "eta", "E", "E_off", "seconds")


class AdaptiveError(ValueError):
    """Invalid loop configuration or a failure at a given level."""


@dataclass(frozen=True)
class AdaptiveConfig:
    """Settings of the adaptive (or uniform) refinement loop.

    Parameters
    ----------
    theta : float
        Doerfler fraction in (0, 1]; 0.4 to 0.6 is the usual range and
        ``theta = 1`` refines every element.
    mode : {"max", "sum"}
        How the three directional estimators are combined per element.
    beta : float
        Weight of the boundary-integral formula in the reported tensor.
    max_elements : int
        No mesh with more elements than this is solved on.
    max_levels : int
        Number of refinement steps after the initial mesh.
    """

    theta: float = 0.6
    mode: str = "max"
    beta: float = 0.4
    max_elements: int = 25000
    max_levels: int = 50
    quad: QuadratureConfig = DEFAULT_QUADRATURE

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise AdaptiveError(f"theta must lie in (0, 1], got {self.theta!r}")
        if self.mode not in MODES:
            raise AdaptiveError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise AdaptiveError(f"beta must lie in [0, 1], got {self.beta!r}")
        if self.max_elements < 1 or self.max_levels < 0:
            raise AdaptiveError("max_elements must be >= 1 and max_levels >= 0")


@dataclass
class LevelRecord:
    """Everything recorded on one mesh of the sequence."""

    level: int
    elements: int
    eta_directions: np.ndarray
    eta: float
    tensor: PolarizabilityTensor
    lp: PolarizabilityTensor
    bi: PolarizabilityTensor
    seconds: float
    h: float
    solver: str = ""
    iterations: int = 0
    E: Optional[float] = None
    E_off: Optional[float] = None

    @property
    def ndof(self) -> int:
        # one unknown per triangle for piecewise constants
        return self.elements

    def tensor_for(self, beta: float) -> PolarizabilityTensor:
        """Symmetrised weighted tensor of this level for another ``beta``."""
        return symmetrize(combine(self.lp, self.bi, beta))

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "elements": self.elements,
            "ndof": self.ndof,
            "h": self.h,
            "eta": self.eta,
            "eta_directions": [float(x) for x in self.eta_directions],
            "E": self.E,
            "E_off": self.E_off,
            "seconds": self.seconds,
            "solver": self.solver,
            "iterations": self.iterations,
            "tensor": self.tensor.to_dict(),
            "lp": self.lp.values.tolist(),
            "bi": self.bi.values.tolist(),
        }


@dataclass
class RefinementHistory:
    """Per-level records of a refinement run, levels contiguous from 0."""

    strategy: str
    records: List[LevelRecord] = field(default_factory=list)
    truncated: bool = False
    stop_reason: str = ""
    config: dict = field(default_factory=dict)
    mesh: Optional[SurfaceMesh] = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final(self) -> LevelRecord:
        return self.records[-1]

    @property
    def elements(self) -> np.ndarray:
        return np.array([r.elements for r in self.records])

    @property
    def errors(self) -> np.ndarray:
        return np.array([np.nan if r.E is None else r.E for r in self.records])

    def with_reference(self, reference, beta: Optional[float] = None) -> "RefinementHistory":
        """Copy with tensors for ``beta`` (default: as recorded) and E, E_off vs ``reference``."""
        out = []
        for r in self.records:
            t = r.tensor if beta is None else r.tensor_for(beta)
            out.append(replace(r, tensor=t, E=relative_error(t, reference),
                               E_off=off_diagonal_error(t, reference)))
        return replace(self, records=out)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "truncated": self.truncated,
            "stop_reason": self.stop_reason,
            "config": self.config,
            "levels": [r.to_dict() for r in self.records],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow([r.level, r.elements, r.ndof, repr(r.eta),
                             "" if r.E is None else repr(r.E),
                             "" if r.E_off is None else repr(r.E_off), repr(r.seconds)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------- estimator


def recover(mesh: SurfaceMesh, values: np.ndarray) -> np.ndarray:
    """Vertex values by area-weighted averaging of adjacent triangle values.

    ``values`` has shape (..., N); the result has shape (..., n_vertices).
    """
    values = np.asarray(values, dtype=float)
    flat = values.reshape(-1, mesh.n_triangles)
    w = np.repeat(mesh.areas, 3)
    idx = mesh.triangles.ravel()
    den = np.bincount(idx, weights=w, minlength=mesh.n_vertices)
    out = np.empty((flat.shape[0], mesh.n_vertices))
    for r, row in enumerate(flat):
        out[r] = np.bincount(idx, weights=w * np.repeat(row, 3), minlength=mesh.n_vertices)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = out / den
    return out.reshape(values.shape[:-1] + (mesh.n_vertices,))


def estimate(mesh: SurfaceMesh, sol: DensitySolution) -> np.ndarray:
    """Per-element estimators ``eta[i, T] = ||phi*_i - phi_i||_{L2(T)}``, shape (3, N).

    ``phi*_i`` is the continuous piecewise-linear recovery of the
    piecewise-constant density.
    """
    if sol.mesh.fingerprint != mesh.fingerprint:
        raise AdaptiveError("density solution belongs to a different mesh")
    return estimate_field(mesh, sol.phi)


def estimate_field(mesh: SurfaceMesh, phi: np.ndarray) -> np.ndarray:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[-1] != mesh.n_triangles:
        raise AdaptiveError(f"field has {phi.shape[-1]} entries, mesh has {mesh.n_triangles} triangles")
    star = recover(mesh, phi)[:, mesh.triangles]          # (m, N, 3)
    ref, wts = triangle_rule(2)
    bary = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])   # (q, 3)
    at_q = np.einsum("mta,qa->mtq", star, bary)
    diff2 = (at_q - phi[:, :, None]) ** 2
    sq = 2.0 * mesh.areas * np.einsum("mtq,q->mt", diff2, wts)
    return np.sqrt(np.maximum(sq, 0.0))


def combine_estimators(eta: np.ndarray, mode: str = "max") -> np.ndarray:
    """Combine directional estimators (3, N) elementwise by ``max`` or ``sum``."""
    eta = np.asarray(eta, dtype=float)
    if mode == "max":
        return eta.max(axis=0)
    if mode == "sum":
        return eta.sum(axis=0)
    raise AdaptiveError(f"mode must be one of {MODES}, got {mode!r}")


def mark_dorfler(eta: np.ndarray, theta: float) -> np.ndarray:
    """Smallest greedy set carrying a ``theta`` share of ``sum(eta**2)``.

    Elements are taken by decreasing ``eta`` with ties going to the lower
    index.  Returns the sorted indices of the marked elements; an all-zero
    estimator yields an empty set.
    """
    eta = np.asarray(eta, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise AdaptiveError(f"theta must lie in (0, 1], got {theta!r}")
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise AdaptiveError("estimators must be finite and non-negative")
    order = np.argsort(-eta, kind="stable")
    sq = eta[order] ** 2
    cum = np.cumsum(sq)
    total = cum[-1] if len(cum) else 0.0
    if total == 0.0:
        return np.empty(0, dtype=np.int64)
    if theta == 1.0:
        count = int(np.count_nonzero(eta))
    else:
        count = int(np.searchsorted(cum, theta * total, side="left")) + 1
    return np.sort(order[:count])


# ---------------------------------------------------------------- loops


def _solve_level(mesh, params, config, level, reference):
    start = time.perf_counter()
    try:
        sol = solve_densities(mesh, params, config.quad)
    except PSTError as exc:
        raise AdaptiveError(f"level {level}: {exc}") from exc
    eta_dir = estimate(mesh, sol)
    eta_t = combine_estimators(eta_dir, config.mode)
    lp, bi = lp_tensor(sol), bi_tensor(sol)
    tensor = symmetrize(combine(lp, bi, config.beta))
    rec = LevelRecord(level, mesh.n_triangles, np.sqrt((eta_dir ** 2).sum(axis=1)),
                      float(np.sqrt((eta_t ** 2).sum())), tensor, lp, bi,
                      time.perf_counter() - start, mesh.h, sol.method, sol.iterations)
    if reference is not None:
        rec.E = relative_error(tensor, reference)
        rec.E_off = off_diagonal_error(tensor, reference)
    return rec, eta_t


def _initial(spec_or_mesh) -> SurfaceMesh:
    if isinstance(spec_or_mesh, SurfaceMesh):
        return spec_or_mesh
    return build_primitive(spec_or_mesh)


def adaptive_loop(spec: Union[GeometrySpec, SurfaceMesh], params: ContrastParams,
                  config: AdaptiveConfig = AdaptiveConfig(), reference=None,
                  progress: Optional[Callable[[LevelRecord], None]] = None) -> RefinementHistory:
    """Solve, estimate, mark and refine until a budget is reached.

    The loop stops after ``config.max_levels`` refinements, when the next
    mesh would exceed ``config.max_elements`` (flagged as truncated), or
    when the estimator vanishes.
    """
    return _loop("adaptive", spec, params, config, reference, progress)


def uniform_loop(spec: Union[GeometrySpec, SurfaceMesh], params: ContrastParams,
                 config: AdaptiveConfig = AdaptiveConfig(), reference=None,
                 progress: Optional[Callable[[LevelRecord], None]] = None) -> RefinementHistory:
    """Same records as :func:`adaptive_loop` on uniformly refined meshes."""
    return _loop("uniform", spec, params, config, reference, progress)


def _loop(strategy, spec, params, config, reference, progress):
    mesh = _initial(spec)
    if mesh.n_triangles > config.max_elements:
        raise AdaptiveError(f"initial mesh has {mesh.n_triangles} elements, above max_elements")
    cfg = {"theta": config.theta, "mode": config.mode, "beta": config.beta,
           "max_elements": config.max_elements, "max_levels": config.max_levels,
           "k": params.k, "alpha": params.alpha}
    hist = RefinementHistory(strategy, config=cfg)
    level = 0
    while True:
        rec, eta_t = _solve_level(mesh, params, config, level, reference)
        hist.records.append(rec)
        hist.mesh = mesh
        if progress is not None:
            progress(rec)
        if level >= config.max_levels:
            hist.stop_reason = "max_levels"
            break
        if strategy == "uniform":
            new = uniform_refine(mesh)
        else:
            marked = mark_dorfler(eta_t, config.theta)
            if len(marked) == 0:
                hist.stop_reason = "converged"
                break
            new = local_refine(mesh, marked)
        if new.n_triangles > config.max_elements:
            hist.truncated = True
            hist.stop_reason = "max_elements"
            break
        mesh = new
        level += 1
    return hist
