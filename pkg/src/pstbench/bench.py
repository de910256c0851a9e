"""Benchmark registry, run drivers and report writers.

Each :class:`BenchmarkCase` bundles a geometry, the contrast and scale, a
reference tensor with its provenance and the default loop settings.  The
drivers return :class:`RunReport`, :class:`ConvergenceResult` and
:class:`SweepResult` objects whose ``to_dict`` layouts are stable, so JSON
and CSV output is reproducible field for field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .adaptive import (CSV_COLUMNS, AdaptiveConfig, AdaptiveError, RefinementHistory,
                       adaptive_loop, uniform_loop)
from .geometry import GeometrySpec, build_primitive
from .mesh import MeshError, SurfaceMesh
from .meshio import import_mesh
from .pst import (ContrastParams, PolarizabilityTensor, PSTError, analytic_ellipsoid,
                  analytic_sphere, off_diagonal_error, relative_error, symmetrize)

STRATEGIES = ("adaptive", "uniform")
COMPARE_MODES = ("full", "diagonal")
REPORT_FORMATS = ("json", "csv")


class BenchError(ValueError):
    """Unknown case, invalid override or a failed run (with case context)."""


def tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # not installed, e.g. running from a source tree
        from . import __version__

        return __version__


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class BenchmarkCase:
    """A named benchmark configuration.

    Parameters
    ----------
    name : str
        Registry key.
    geometry : GeometrySpec
        Unit object B and the resolution of the initial mesh.
    alpha, k : float
        Scale (metres) and conductivity contrast of the reference.
    reference : tuple or None
        Symmetric 3x3 reference tensor in m^3.  ``None`` for analytic cases,
        whose reference is recomputed for any ``k`` and ``alpha``.
    provenance : str
        Where the reference comes from.
    tolerance : float
        Pass threshold: on ``E`` (``compare="full"``) or on the largest
        relative deviation of a diagonal entry (``compare="diagonal"``).
    comment : str
        Free-form note, e.g. raw values of entries stored as zero.
    """

    name: str
    geometry: GeometrySpec
    alpha: float
    k: float
    reference: Optional[tuple]
    provenance: str
    tolerance: float
    compare: str = "full"
    beta: float = 0.4
    theta: float = 0.6
    mode: str = "max"
    strategy: str = "adaptive"
    max_elements: int = 25000
    comment: str = ""

    def __post_init__(self):
        if not self.tolerance > 0:
            raise BenchError(f"case {self.name}: tolerance must be positive")
        if self.compare not in COMPARE_MODES:
            raise BenchError(f"case {self.name}: compare must be one of {COMPARE_MODES}")
        if self.strategy not in STRATEGIES:
            raise BenchError(f"case {self.name}: strategy must be one of {STRATEGIES}")
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=float)
            if ref.shape != (3, 3) or not np.array_equal(ref, ref.T):
                raise BenchError(f"case {self.name}: reference must be a symmetric 3x3 tensor")

    @property
    def analytic(self) -> bool:
        return self.reference is None

    def reference_for(self, params: ContrastParams) -> Optional[PolarizabilityTensor]:
        """Reference tensor at ``params``, or ``None`` when none is known.

        Analytic references follow any contrast and scale.  Tabulated ones
        only follow a change of scale (the tensor is proportional to
        ``alpha**3``) and are unavailable at another contrast.
        """
        g = self.geometry
        if g.kind == "sphere":
            return analytic_sphere(params, g.params.get("radius", 1.0))
        if g.kind == "ellipsoid":
            return analytic_ellipsoid(params, *g.params.get("axes", (1.0, 1.0, 1.0)))
        if self.reference is None or params.k != self.k:
            return None
        values = np.asarray(self.reference, dtype=float) * (params.alpha / self.alpha) ** 3
        return PolarizabilityTensor(values, "reference", params.alpha, params.k, None, True,
                                    {"provenance": self.provenance})

    def config(self, **overrides) -> AdaptiveConfig:
        return AdaptiveConfig(theta=overrides.get("theta", self.theta),
                              mode=overrides.get("mode", self.mode),
                              beta=overrides.get("beta", self.beta),
                              max_elements=overrides.get("max_elements", self.max_elements))


def _sym(diag, off):
    """Symmetric tensor from (T11, T22, T33) and (T12, T13, T23)."""
    (a, b, c), (d, e, f) = diag, off
    return ((a, d, e), (d, b, f), (e, f, c))


_CASES = (
    BenchmarkCase(
        "sphere", GeometrySpec("sphere", {"radius": 1.0}, 1), 0.01, 10.0, None,
        "analytic: 4 pi (k - 1) / (k + 2) alpha^3 I", 0.01, strategy="uniform",
        max_elements=6000),
    BenchmarkCase(
        "ellipsoid", GeometrySpec("ellipsoid", {"axes": (1.0, 0.7, 0.5)}, 1), 0.01, 10.0, None,
        "analytic: depolarization factors of the (1, 0.7, 0.5) ellipsoid", 0.02,
        strategy="uniform", max_elements=6000),
    BenchmarkCase(
        "lshape", GeometrySpec("lshape", {}, 0), 0.01, 10.0,
        _sym(np.array([1.54683606, 1.16202896, 0.57033981]) * 1e-4,
             (-0.15091553e-4, 0.0, 0.0)),
        "published adaptive BEM benchmark (23 358 triangles)", 0.01,
        comment="raw T13 = -6.99198691e-10, T23 = 3.33569676e-10, stored as 0 by symmetry"),
    BenchmarkCase(
        "cube", GeometrySpec("cube", {}, 1), 0.01, 10.0,
        _sym(np.array([2.51110996, 2.51111340, 2.51110887]) * 1e-6, (0.0, 0.0, 0.0)),
        "published adaptive BEM benchmark (23 040 triangles)", 0.01,
        comment="raw T12 = 1.92945670e-13, T13 = -1.59571932e-12, T23 = -4.11272795e-12, "
                "stored as 0 by symmetry"),
    BenchmarkCase(
        "tetrahedron", GeometrySpec("tetrahedron", {}, 1), 0.01, 10.0,
        _sym(np.array([9.30682676, 6.83952305, 7.80618516]) * 1e-5,
             np.array([1.12847255, -0.76359289, 0.43032199]) * 1e-5),
        "published adaptive BEM benchmark (24 152 triangles)", 0.02, beta=0.5),
    BenchmarkCase(
        "key", GeometrySpec("key", {}, 0), 0.001, 10.0,
        _sym(np.array([2.66099087, 4.49014335, 0.96008445]) * 1e-6,
             np.array([-2.40425167e-2, 1.94050498e-5, -3.78250864e-6]) * 1e-6),
        "published adaptive BEM benchmark (34 354 triangles)", 0.10, compare="diagonal",
        beta=0.3, max_elements=40000,
        comment="relaxed: the blade cuts are approximated by two notches, "
                "so only the diagonal is compared"),
)


def registry() -> List[BenchmarkCase]:
    """All built-in benchmark cases."""
    return list(_CASES)


def get_case(name: str) -> BenchmarkCase:
    for case in _CASES:
        if case.name == name:
            return case
    raise BenchError(f"unknown case {name!r}; available: {', '.join(c.name for c in _CASES)}")


# ---------------------------------------------------------------- runs


_OVERRIDES = ("k", "alpha", "beta", "theta", "mode", "strategy", "max_elements", "levels",
              "mesh", "resolution")


@dataclass
class RunReport:
    """Outcome of one benchmark run."""

    case: str
    tensor: PolarizabilityTensor
    E: Optional[float]
    E_off: Optional[float]
    history: RefinementHistory
    config: dict
    version: str
    reference: Optional[PolarizabilityTensor] = None
    provenance: str = ""
    tolerance: float = float("nan")
    compare: str = "full"
    deviation: Optional[float] = None
    passed: Optional[bool] = None

    def to_dict(self, timings: bool = True) -> dict:
        hist = self.history.to_dict()
        if not timings:
            for level in hist["levels"]:
                level.pop("seconds")
        return {
            "case": self.case,
            "version": self.version,
            "config": self.config,
            "tensor": self.tensor.to_dict(),
            "reference": None if self.reference is None else self.reference.values.tolist(),
            "provenance": self.provenance,
            "compare": self.compare,
            "tolerance": self.tolerance,
            "E": self.E,
            "E_off": self.E_off,
            "deviation": self.deviation,
            "passed": self.passed,
            "elements": self.history.final.elements,
            "ndof": self.history.final.ndof,
            "history": hist,
        }


def _check_overrides(overrides: dict):
    unknown = sorted(set(overrides) - set(_OVERRIDES))
    if unknown:
        raise BenchError(f"unknown override(s): {', '.join(unknown)}")


def _deviation(tensor, reference, compare: str) -> float:
    t, r = tensor.values, reference.values
    if compare == "diagonal":
        return float(np.max(np.abs(np.diag(t) - np.diag(r)) / np.abs(np.diag(r))))
    return relative_error(t, r)


def _prepare(case: BenchmarkCase, overrides: dict):
    _check_overrides(overrides)
    try:
        params = ContrastParams(overrides.get("k", case.k), overrides.get("alpha", case.alpha))
        config = case.config(**overrides)
        if "levels" in overrides:
            config = replace(config, max_levels=int(overrides["levels"]))
    except (PSTError, AdaptiveError) as exc:
        raise BenchError(f"case {case.name}: {exc}") from exc
    strategy = overrides.get("strategy", case.strategy)
    if strategy not in STRATEGIES:
        raise BenchError(f"case {case.name}: strategy must be one of {STRATEGIES}")
    mesh = overrides.get("mesh")
    try:
        if mesh is None:
            geometry = case.geometry
            if "resolution" in overrides:
                geometry = replace(geometry, resolution=int(overrides["resolution"]))
            mesh = build_primitive(geometry)
        elif not isinstance(mesh, SurfaceMesh):
            mesh = import_mesh(mesh)
    except MeshError as exc:
        raise BenchError(f"case {case.name}: {exc}") from exc
    return params, config, strategy, mesh


def _run(case, params, config, strategy, mesh, progress):
    reference = case.reference_for(params)
    loop = adaptive_loop if strategy == "adaptive" else uniform_loop
    try:
        hist = loop(mesh, params, config, reference, progress)
    except (AdaptiveError, PSTError, MeshError) as exc:
        raise BenchError(f"case {case.name}: {exc}") from exc
    return hist, reference


def _config_echo(case, params, config, strategy, mesh) -> dict:
    return {"k": params.k, "alpha": params.alpha, "beta": config.beta, "theta": config.theta,
            "mode": config.mode, "strategy": strategy, "max_elements": config.max_elements,
            "max_levels": config.max_levels, "initial_elements": mesh.n_triangles,
            "geometry": case.geometry.to_dict()}


def run_case(case, overrides: Optional[dict] = None,
             progress: Optional[Callable] = None) -> RunReport:
    """Run ``case`` (a :class:`BenchmarkCase` or a registry name).

    ``overrides`` may replace ``k``, ``alpha``, ``beta``, ``theta``,
    ``mode``, ``strategy``, ``max_elements``, ``levels`` (refinement steps),
    ``resolution`` (of the initial mesh) or supply a ``mesh`` (a
    :class:`SurfaceMesh` or a file path).  Invalid overrides, including
    ``k = 1``, are rejected before any mesh is built or operator assembled.
    """
    case = get_case(case) if isinstance(case, str) else case
    params, config, strategy, mesh = _prepare(case, dict(overrides or {}))
    hist, reference = _run(case, params, config, strategy, mesh, progress)
    final = hist.final
    report = RunReport(case.name, final.tensor, final.E, final.E_off, hist,
                       _config_echo(case, params, config, strategy, mesh), tool_version(),
                       reference, case.provenance, case.tolerance, case.compare)
    if reference is not None:
        report.deviation = _deviation(final.tensor, reference, case.compare)
        report.passed = bool(report.deviation <= case.tolerance)
    return report


@dataclass
class ConvergenceResult:
    """A refinement history with the fitted model ``E = C N^(-s/2)``."""

    history: RefinementHistory
    rate: float
    constant: float

    def to_dict(self) -> dict:
        return {"rate": self.rate, "constant": self.constant, "history": self.history.to_dict()}


def fit_rate(elements: Sequence[float], errors: Sequence[float]):
    """Least-squares fit of ``E = C N^(-s/2)``; returns ``(s, C)``.

    Levels with a zero or undefined error are ignored.
    """
    n = np.asarray(elements, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(e) & (e > 0)
    if ok.sum() < 2:
        raise BenchError("need >= 2 levels to fit a rate")
    slope, intercept = np.polyfit(np.log(n[ok]), np.log(e[ok]), 1)
    return float(-2.0 * slope), float(math.exp(intercept))


def run_convergence(case, strategy: str = "uniform", levels: int = 3,
                    overrides: Optional[dict] = None,
                    progress: Optional[Callable] = None) -> ConvergenceResult:
    """Solve on ``levels`` successive meshes and fit the convergence rate."""
    if levels < 2:
        raise BenchError("need >= 2 levels to fit a rate")
    case = get_case(case) if isinstance(case, str) else case
    overrides = dict(overrides or {}, strategy=strategy, levels=levels - 1)
    params, config, strategy, mesh = _prepare(case, overrides)
    hist, reference = _run(case, params, config, strategy, mesh, progress)
    if reference is None:
        raise BenchError(f"case {case.name}: no reference tensor at k = {params.k}")
    s, c = fit_rate(hist.elements, hist.errors)
    return ConvergenceResult(hist, s, c)


@dataclass
class SweepResult:
    """Histories for several weights ``beta`` sharing one set of solves."""

    histories: Dict[float, RefinementHistory]
    best_beta: float

    def final_errors(self) -> Dict[float, float]:
        return {b: float(h.final.E) for b, h in self.histories.items()}

    def to_dict(self) -> dict:
        return {"best_beta": self.best_beta,
                "final_E": {repr(b): e for b, e in self.final_errors().items()},
                "histories": {repr(b): h.to_dict() for b, h in self.histories.items()}}


def parse_betas(text: str) -> List[float]:
    """Parse ``"0:1:0.1"`` (start:stop:step, inclusive) or ``"0,0.5,1"``."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            betas = [round(start + i * step, 12) for i in range(count)]
        else:
            betas = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise BenchError(f"cannot parse betas {text!r}; use start:stop:step or a comma list") from None
    if not betas or any(not 0.0 <= b <= 1.0 for b in betas):
        raise BenchError("betas must be a non-empty subset of [0, 1]")
    return betas


def beta_sweep(case, betas: Sequence[float], strategy: Optional[str] = None,
               overrides: Optional[dict] = None,
               progress: Optional[Callable] = None) -> SweepResult:
    """One refinement run, post-processed for every weight in ``betas``.

    The densities and the estimator do not depend on ``beta``, so the mesh
    sequence is shared and nothing is re-solved.  The best weight is the one
    with the smallest final ``E`` (ties go to the first listed).
    """
    betas = [float(b) for b in betas]
    if not betas or any(not 0.0 <= b <= 1.0 for b in betas):
        raise BenchError("betas must be a non-empty subset of [0, 1]")
    case = get_case(case) if isinstance(case, str) else case
    overrides = dict(overrides or {})
    if strategy is not None:
        overrides["strategy"] = strategy
    params, config, strategy, mesh = _prepare(case, overrides)
    reference = case.reference_for(params)
    if reference is None:
        raise BenchError(f"case {case.name}: no reference tensor at k = {params.k}")
    hist, _ = _run(case, params, config, strategy, mesh, progress)
    histories = {b: hist.with_reference(reference, b) for b in betas}
    best = min(betas, key=lambda b: histories[b].final.E)
    return SweepResult(histories, best)


# ---------------------------------------------------------------- reports


_REPORT_KEYS = {
    "case": str, "version": str, "config": dict, "tensor": dict, "provenance": str,
    "compare": str, "tolerance": float, "elements": int, "ndof": int, "history": dict,
}
_LEVEL_KEYS = ("level", "elements", "ndof", "eta", "E", "E_off", "tensor", "lp", "bi")


def validate_report(doc: dict) -> dict:
    """Check the layout of a JSON run report; returns ``doc`` unchanged."""
    for key, kind in _REPORT_KEYS.items():
        if key not in doc:
            raise BenchError(f"report is missing {key!r}")
        if kind is float:
            ok = isinstance(doc[key], (int, float))
        else:
            ok = isinstance(doc[key], kind)
        if not ok:
            raise BenchError(f"report field {key!r} should be {kind.__name__}")
    for key in ("E", "E_off", "deviation"):
        val = doc.get(key)
        if val is not None and not (isinstance(val, (int, float)) and val >= 0):
            raise BenchError(f"report field {key!r} must be a non-negative number or null")
    t = np.asarray(doc["tensor"].get("tensor"), dtype=float)
    if t.shape != (3, 3):
        raise BenchError("report tensor must be 3x3")
    levels = doc["history"].get("levels")
    if not isinstance(levels, list) or not levels:
        raise BenchError("report history needs at least one level")
    for i, level in enumerate(levels):
        missing = [k for k in _LEVEL_KEYS if k not in level]
        if missing:
            raise BenchError(f"history level {i} is missing {', '.join(missing)}")
        if level["level"] != i:
            raise BenchError(f"history levels are not contiguous at position {i}")
    return doc


def report(run: RunReport, out_dir, formats: Sequence[str] = REPORT_FORMATS,
           stem: Optional[str] = None) -> List[Path]:
    """Write ``<stem>.json`` (full report) and/or ``<stem>.csv`` (history)."""
    bad = [f for f in formats if f not in REPORT_FORMATS]
    if bad:
        raise BenchError(f"unknown report format(s) {bad}; expected {REPORT_FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or run.case
    paths = []
    if "json" in formats:
        path = out / f"{stem}.json"
        doc = validate_report(run.to_dict())
        path.write_text(json.dumps(doc, indent=2) + "\n")
        paths.append(path)
    if "csv" in formats:
        path = out / f"{stem}.csv"
        run.history.to_csv(path)
        paths.append(path)
    return paths


__all__ = [
    "BenchError", "BenchmarkCase", "ConvergenceResult", "CSV_COLUMNS", "RunReport",
    "SweepResult", "beta_sweep", "fit_rate", "get_case", "parse_betas", "registry", "report",
    "run_case", "run_convergence", "tool_version", "validate_report",
]
