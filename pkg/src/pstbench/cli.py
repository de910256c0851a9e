"""Command-line interface: ``pstbench list | run | sweep | mesh``.

Exit status is 0 on success, 2 when a run misses its case tolerance and 1
on any error.  ``PSTBENCH_THREADS`` caps the number of worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveError
from .bench import (BenchError, beta_sweep, get_case, parse_betas, registry, report, run_case,
                    tool_version)
from .geometry import KINDS, GeometrySpec, build_primitive
from .mesh import MeshError, local_refine, uniform_refine, validate
from .meshio import export_mesh, import_mesh
from .operators import OperatorError, assemble_adjoint_double_layer, assemble_single_layer, dump_matrix
from .pst import PSTError

EXIT_OK, EXIT_ERROR, EXIT_TOLERANCE = 0, 1, 2
#: Largest mesh whose dense operators ``mesh info --dump-matrix`` will write.
DUMP_LIMIT = 8000


class _Parser(argparse.ArgumentParser):
    # usage errors share the generic error status; 2 is reserved for tolerance misses
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return "nan" if x is None else repr(float(x))


def _tensor_lines(values) -> list:
    return ["  " + " ".join(f"{v: .17e}" for v in row) for row in np.asarray(values)]


def set_threads(env=None) -> int:
    """Apply ``PSTBENCH_THREADS`` to numba; returns the thread count in use."""
    import numba

    env = os.environ if env is None else env
    raw = env.get("PSTBENCH_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise BenchError(f"PSTBENCH_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise BenchError("PSTBENCH_THREADS must be >= 1")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


# ---------------------------------------------------------------- commands


def cmd_list(args) -> int:
    cols = ("name", "kind", "k", "alpha", "beta", "theta", "mode", "strategy", "max_elements",
            "compare", "tolerance")
    print("\t".join(cols + ("provenance",)))
    for c in registry():
        row = (c.name, c.geometry.kind, repr(c.k), repr(c.alpha), repr(c.beta), repr(c.theta),
               c.mode, c.strategy, str(c.max_elements), c.compare, repr(c.tolerance))
        print("\t".join(row + (c.provenance,)))
    return EXIT_OK


def _overrides(args) -> dict:
    out = {}
    for key in ("k", "alpha", "beta", "theta", "mode", "strategy", "max_elements", "levels",
                "resolution"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "mesh", None):
        out["mesh"] = args.mesh
    return out


def _progress(args):
    if args.quiet:
        return None

    def show(rec):
        extra = "" if rec.E is None else f" E={rec.E!r} E_off={rec.E_off!r}"
        print(f"level {rec.level}: elements={rec.elements} eta={rec.eta!r}{extra}"
              f" solver={rec.solver} seconds={rec.seconds:.2f}", file=sys.stderr, flush=True)
    return show


def cmd_run(args) -> int:
    run = run_case(get_case(args.case), _overrides(args), _progress(args))
    final = run.history.final
    print(f"case {run.case}  elements {final.elements}  ndof {final.ndof}  "
          f"levels {len(run.history)}  stop {run.history.stop_reason}")
    print("tensor [m^3]:")
    print("\n".join(_tensor_lines(run.tensor.values)))
    print(f"E {_fmt(run.E)}")
    print(f"E_off {_fmt(run.E_off)}")
    if run.passed is not None:
        print(f"{run.compare} deviation {_fmt(run.deviation)} tolerance {run.tolerance!r}: "
              f"{'PASS' if run.passed else 'FAIL'}")
    else:
        print("no reference tensor for this configuration")
    if args.out:
        for path in report(run, args.out):
            print(f"wrote {path}")
    return EXIT_TOLERANCE if run.passed is False else EXIT_OK


def cmd_sweep(args) -> int:
    betas = parse_betas(args.betas)
    res = beta_sweep(get_case(args.case), betas, args.strategy, _overrides(args), _progress(args))
    print("beta\tE\tE_off")
    for b, hist in res.histories.items():
        print(f"{b!r}\t{hist.final.E!r}\t{hist.final.E_off!r}")
    print(f"best beta {res.best_beta!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for b, hist in res.histories.items():
            hist.to_csv(out / f"{args.case}_beta{b:.2f}.csv")
        print(f"wrote {len(res.histories)} CSV files to {out}")
    return EXIT_OK


def cmd_mesh_make(args) -> int:
    params = {}
    if args.max_edge is not None:
        params["max_edge"] = args.max_edge
    if args.kind == "sphere" and args.radius is not None:
        params["radius"] = args.radius
    if args.kind == "ellipsoid" and args.axes is not None:
        params["axes"] = tuple(args.axes)
    mesh = build_primitive(GeometrySpec(args.kind, params, args.resolution))
    export_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return EXIT_OK


def cmd_mesh_refine(args) -> int:
    mesh = import_mesh(args.input)
    if args.triangles:
        marked = [int(t) for t in args.triangles.split(",") if t.strip()]
        bad = [t for t in marked if not 0 <= t < mesh.n_triangles]
        if bad:
            raise MeshError(f"triangle index {bad[0]} out of range 0..{mesh.n_triangles - 1}")
        mesh = local_refine(mesh, marked)
    else:
        for _ in range(args.times):
            mesh = uniform_refine(mesh)
    export_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    mesh = import_mesh(args.input, validate=False)
    rep = validate(mesh)
    print(f"vertices {rep.n_vertices}")
    print(f"triangles {rep.n_triangles}")
    print(f"area {rep.area!r}")
    print(f"volume {rep.volume!r}")
    print(f"h {rep.h!r}")
    print(f"watertight {not (rep.open_edges or rep.nonmanifold_edges)}")
    print(f"valid {rep.ok}")
    for msg in rep.errors():
        print(f"problem: {msg}")
    if args.dump_matrix:
        if not rep.ok:
            raise MeshError("refusing to assemble operators on an invalid mesh")
        if mesh.n_triangles > DUMP_LIMIT:
            raise OperatorError(f"mesh has {mesh.n_triangles} triangles; "
                                f"dense dumps are limited to {DUMP_LIMIT}")
        prefix = Path(args.dump_matrix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        for tag, op in (("V", assemble_single_layer(mesh)), ("K", assemble_adjoint_double_layer(mesh))):
            path = dump_matrix(op, f"{prefix}.{tag}.bin")
            print(f"wrote {path}")
    return EXIT_OK if rep.ok else EXIT_ERROR


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pstbench", description="Polarizability tensor benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("list", help="list benchmark cases").set_defaults(func=cmd_list)

    def loop_options(q):
        q.add_argument("--case", required=True)
        q.add_argument("--k", type=float)
        q.add_argument("--alpha", type=float)
        q.add_argument("--theta", type=float)
        q.add_argument("--mode", choices=("max", "sum"))
        q.add_argument("--strategy", choices=("adaptive", "uniform"))
        q.add_argument("--max-elements", dest="max_elements", type=int)
        q.add_argument("--levels", type=int, help="number of refinement steps")
        q.add_argument("--resolution", type=int, help="uniform refinements of the initial mesh")
        q.add_argument("--mesh", help="initial mesh file (OFF or JSON)")
        q.add_argument("--out", help="output directory for reports")
        q.add_argument("--quiet", action="store_true", help="no per-level progress")

    run = sub.add_parser("run", help="run one benchmark case")
    loop_options(run)
    run.add_argument("--beta", type=float)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="evaluate several weights beta on one run")
    loop_options(sweep)
    sweep.add_argument("--betas", default="0:1:0.1", help="start:stop:step or comma list")
    sweep.set_defaults(func=cmd_sweep)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True, parser_class=_Parser)
    make = msub.add_parser("make", help="build a benchmark geometry")
    make.add_argument("kind", choices=[k for k in KINDS if k != "external"])
    make.add_argument("--resolution", type=int, default=0)
    make.add_argument("--max-edge", dest="max_edge", type=float)
    make.add_argument("--radius", type=float)
    make.add_argument("--axes", type=float, nargs=3)
    make.add_argument("--out", required=True)
    make.set_defaults(func=cmd_mesh_make)
    refine = msub.add_parser("refine", help="refine a mesh file")
    refine.add_argument("input")
    refine.add_argument("--out", required=True)
    refine.add_argument("--times", type=int, default=1, help="uniform refinement steps")
    refine.add_argument("--triangles", help="comma-separated triangles to refine locally")
    refine.set_defaults(func=cmd_mesh_refine)
    info = msub.add_parser("info", help="check a mesh file")
    info.add_argument("input")
    info.add_argument("--dump-matrix", dest="dump_matrix", metavar="PREFIX",
                      help="write dense V and K* to PREFIX.V.bin and PREFIX.K.bin")
    info.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        set_threads()
        return args.func(args)
    except (BenchError, MeshError, PSTError, AdaptiveError, OperatorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
