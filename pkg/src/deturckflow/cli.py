"""Command line interface.

Exit codes: 0 on success, 2 on an invalid spec or arguments, 3 when a run
ended by mesh degeneration or solver failure (outputs are still written).
"""

import argparse
import logging
import sys
from pathlib import Path

from .errors import DeturckFlowError, SpecError
from .fileio import write_curve_csv, write_curve_vtk, write_mesh
from .runner import (
    CURVE_PROBLEMS,
    SURFACE_PROBLEMS,
    EocStudyError,
    ProblemSpec,
    initial_mesh,
    load_spec,
    run_eoc_study,
    run_experiment,
    write_eoc_csv,
)

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_NUMERICAL = 3


def _parser():
    p = argparse.ArgumentParser(prog="deturckflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every scheme of an experiment file")
    run.add_argument("spec")
    run.add_argument("--parallel", action="store_true", help="run the schemes in separate processes")

    eoc = sub.add_parser("eoc", help="shrinking-circle convergence study")
    eoc.add_argument("spec")

    val = sub.add_parser("validate", help="check an experiment file without running it")
    val.add_argument("spec")

    mesh = sub.add_parser("mesh", help="mesh utilities")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = mesh_sub.add_parser("gen", help="write an initial mesh (.off/.vtk for surfaces, .csv/.vtk for curves)")
    gen.add_argument("shape", choices=CURVE_PROBLEMS + SURFACE_PROBLEMS)
    gen.add_argument("out")
    gen.add_argument("--resolution", type=int, default=None, help="curve vertices or surface subdivisions")
    gen.add_argument("--radius", type=float, default=1.0)
    gen.add_argument("--grading-ratio", type=float, default=None)
    gen.add_argument("--r1", type=float, default=1.0)
    gen.add_argument("--r2", type=float, default=0.6)
    return p


def _cmd_run(args):
    spec = load_spec(args.spec)
    manifest = run_experiment(spec, parallel=args.parallel)
    for r in manifest.results:
        print(f"{r.label}: {r.termination} after {r.steps} steps at t={r.final_time:.6g}, size {r.final_size:.6g}")
        if r.message:
            print(f"  {r.message}")
    print(f"manifest: {Path(spec.output_dir) / 'manifest.json'}")
    return EXIT_NUMERICAL if manifest.numerical_failure else EXIT_OK


def _cmd_eoc(args):
    spec = load_spec(args.spec)
    try:
        study = run_eoc_study(spec)
    except EocStudyError as exc:
        print(f"study aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    path = Path(spec.output_dir) / "eoc.csv"
    write_eoc_csv(path, study)
    print(f"{'h':>12} {'steps':>6} {'L2 error':>12} {'order':>6} {'H1 error':>12} {'order':>6}")
    for k, ((h, e2, o2), (_, e1, o1)) in enumerate(zip(study.l2.rows(), study.h1.rows())):
        fo = lambda o: "" if o is None else f"{o:.3f}"  # noqa: E731
        print(f"{h:12.5e} {study.steps[k]:6d} {e2:12.5e} {fo(o2):>6} {e1:12.5e} {fo(o1):>6}")
    print(f"table: {path}")
    return EXIT_OK


def _cmd_validate(args):
    spec = load_spec(args.spec)
    print(f"ok: {spec.problem.kind} '{spec.problem.shape}', schemes {', '.join(spec.labels())}")
    return EXIT_OK


def _cmd_mesh_gen(args):
    kind = "curve" if args.shape in CURVE_PROBLEMS else "surface"
    resolution = args.resolution if args.resolution is not None else (64 if kind == "curve" else 3)
    problem = ProblemSpec(kind, args.shape, resolution, args.radius, args.grading_ratio, args.r1, args.r2)
    mesh = initial_mesh(problem)
    out = Path(args.out)
    ext = out.suffix.lower()
    if kind == "curve":
        if ext == ".csv":
            write_curve_csv(out, mesh)
        elif ext == ".vtk":
            write_curve_vtk(out, mesh)
        else:
            raise SpecError(f"curves are written as .csv or .vtk, not {ext!r}")
    else:
        if ext not in (".off", ".vtk"):
            raise SpecError(f"surfaces are written as .off or .vtk, not {ext!r}")
        write_mesh(out, mesh)
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SPEC
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "eoc": _cmd_eoc, "validate": _cmd_validate}
    try:
        if args.command == "mesh":
            return _cmd_mesh_gen(args)
        return handlers[args.command](args)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (DeturckFlowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
