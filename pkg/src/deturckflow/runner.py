"""Configuration-driven experiments: single runs, scheme comparisons and EOC studies.

An experiment file is TOML with three tables::

    [problem]
    kind = "curve"                      # or "surface"
    shape = "example1_flattened_circle" # see CURVE_PROBLEMS / SURFACE_PROBLEMS
    resolution = 64                     # curve vertices, or icosphere subdivisions
    # optional: radius, grading_ratio, r1, r2, n_theta, n_phi, mesh_file

    [[schemes]]
    name = "alg1"                       # curves: alg1, bgn; surfaces: alg2, alg3, bgn
    alpha = 1e-3
    tau = 1e-4
    # optional: label, tau_rule, alpha_equals_tau, damping, solver, solver_tol

    [run]
    end_time = 0.15
    # optional: extinction_threshold, snapshot_every, output_dir, seed

    [eoc]                               # only read by the eoc study
    resolutions = [16, 32, 64, 128]
    c = 0.5

Every scheme writes ``<label>.csv`` (one DiagnosticsRecord per step, step 0
included), mesh snapshots, and the run writes ``manifest.json``.
"""

import json
import logging
import math
import os
import time as wallclock
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .csf import BgnCurveConfig, CsfConfig, CsfState, step_bgn_curve, step_csf
from .diagnostics import DiagnosticsRecord, EocTable, eoc, h1_error_vs_circle, measure, read_csv, write_csv
from .errors import (
    DegenerateNormalError,
    DegenerateReferenceError,
    DeturckFlowError,
    FixedPointNonConvergence,
    InvalidMeshError,
    MeshDegenerationError,
    SingularKernelError,
    SolverFailure,
    SpecError,
)
from .fileio import read_mesh, write_curve_csv, write_mesh
from .mcf import McfConfig, McfState, step_mcf
from .mesh import (
    CURVE_SHAPES,
    SURFACE_SHAPES,
    TWO_PI,
    generate_circle,
    generate_icosphere,
    generate_parametrized_curve,
    generate_surface_example,
)
from .solvers import SolverConfig

log = logging.getLogger(__name__)

CURVE_PROBLEMS = ("circle",) + CURVE_SHAPES
SURFACE_PROBLEMS = SURFACE_SHAPES
CURVE_SCHEMES = ("alg1", "bgn")
SURFACE_SCHEMES = ("alg2", "alg3", "bgn")
TERMINATION_REASONS = ("end-time", "extinction", "degeneration", "solver-failure")
NUMERICAL_FAILURES = ("degeneration", "solver-failure")
MIN_SEGMENT = 1e-12
DEFAULT_EXTINCTION = 1e-3


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    shape: str
    resolution: int
    radius: float = 1.0
    grading_ratio: float = None
    r1: float = 1.0
    r2: float = 0.6
    n_theta: int = None
    n_phi: int = None
    mesh_file: str = None


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    tau: float
    alpha: float = 1.0
    label: str = None
    tau_rule: str = "fixed"
    alpha_equals_tau: bool = False
    damping: float = 1.0
    solver: str = None
    solver_tol: float = None


@dataclass(frozen=True)
class ExperimentSpec:
    problem: ProblemSpec
    schemes: tuple
    end_time: float = None
    extinction_threshold: float = None
    snapshot_every: int = 0
    output_dir: str = "output"
    seed: int = 0
    eoc_resolutions: tuple = ()
    eoc_c: float = 0.5

    def labels(self):
        return [s.label for s in self.schemes]

    def to_dict(self):
        d = asdict(self)
        d["schemes"] = [asdict(s) for s in self.schemes]
        return d


@dataclass
class SchemeResult:
    label: str
    csv_path: str
    snapshots: list
    termination: str
    message: str
    steps: int
    final_time: float
    final_size: float
    wall_clock: float


@dataclass
class RunManifest:
    spec: dict
    results: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def terminations(self):
        return {r.label: r.termination for r in self.results}

    @property
    def numerical_failure(self):
        return any(r.termination in NUMERICAL_FAILURES for r in self.results)

    def to_dict(self):
        return {"spec": self.spec, "results": [asdict(r) for r in self.results], "wall_clock": self.wall_clock}


# --------------------------------------------------------------------------
# spec parsing and validation


_PROBLEM_KEYS = {f for f in ProblemSpec.__dataclass_fields__}
_SCHEME_KEYS = {f for f in SchemeSpec.__dataclass_fields__}
_RUN_KEYS = {"end_time", "extinction_threshold", "snapshot_every", "output_dir", "seed"}
_EOC_KEYS = {"resolutions", "c"}


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise SpecError(f"[{where}] must be a table")
    unknown = set(table) - allowed
    if unknown:
        raise SpecError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")


def spec_from_dict(data, base_dir=None):
    """Build and validate an ExperimentSpec from a parsed TOML document."""
    _check_keys(data, {"problem", "schemes", "run", "eoc"}, "top level")
    if "problem" not in data:
        raise SpecError("missing [problem] table")
    _check_keys(data["problem"], _PROBLEM_KEYS, "problem")
    try:
        problem = ProblemSpec(**data["problem"])
    except TypeError as exc:
        raise SpecError(f"[problem]: {exc}") from None
    if problem.mesh_file is not None and base_dir is not None:
        problem = replace(problem, mesh_file=str(Path(base_dir) / problem.mesh_file))
    schemes = []
    raw = data.get("schemes", [])
    if not isinstance(raw, list):
        raise SpecError("schemes must be an array of tables ([[schemes]])")
    for k, item in enumerate(raw):
        _check_keys(item, _SCHEME_KEYS, f"schemes.{k}")
        try:
            s = SchemeSpec(**item)
        except TypeError as exc:
            raise SpecError(f"[[schemes]] entry {k}: {exc}") from None
        if s.label is None:
            s = replace(s, label=f"{s.name}_{k}")
        schemes.append(s)
    run = data.get("run", {})
    _check_keys(run, _RUN_KEYS, "run")
    eoc_table = data.get("eoc", {})
    _check_keys(eoc_table, _EOC_KEYS, "eoc")
    out = run.get("output_dir", "output")
    if base_dir is not None and not os.path.isabs(out):
        out = str(Path(base_dir) / out)
    spec = ExperimentSpec(
        problem=problem,
        schemes=tuple(schemes),
        end_time=run.get("end_time"),
        extinction_threshold=run.get("extinction_threshold"),
        snapshot_every=run.get("snapshot_every", 0),
        output_dir=out,
        seed=run.get("seed", 0),
        eoc_resolutions=tuple(eoc_table.get("resolutions", ())),
        eoc_c=eoc_table.get("c", 0.5),
    )
    validate_spec(spec)
    return spec


def load_spec(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise SpecError(f"spec file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"{path}: {exc}") from None
    return spec_from_dict(data, base_dir=path.parent)


def _positive(value, name):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 or not math.isfinite(value):
        raise SpecError(f"{name} must be a positive number, got {value!r}")


def validate_spec(spec, require_schemes=True, check_output=True):
    p = spec.problem
    if p.kind == "curve":
        if p.shape not in CURVE_PROBLEMS:
            raise SpecError(f"unknown curve shape {p.shape!r}; expected one of {CURVE_PROBLEMS}")
        allowed = CURVE_SCHEMES
    elif p.kind == "surface":
        if p.mesh_file is None and p.shape not in SURFACE_PROBLEMS:
            raise SpecError(f"unknown surface shape {p.shape!r}; expected one of {SURFACE_PROBLEMS}")
        allowed = SURFACE_SCHEMES
    else:
        raise SpecError(f"problem kind must be 'curve' or 'surface', got {p.kind!r}")
    if not isinstance(p.resolution, int) or p.resolution < (3 if p.kind == "curve" else 0):
        raise SpecError(f"invalid resolution {p.resolution!r}")
    _positive(p.radius, "radius")
    if require_schemes and not spec.schemes:
        raise SpecError("at least one scheme is required")
    labels = spec.labels()
    if len(set(labels)) != len(labels):
        raise SpecError("scheme labels must be unique")
    for s in spec.schemes:
        if s.name not in allowed:
            raise SpecError(f"scheme {s.name!r} is not available for {p.kind}s; expected one of {allowed}")
        _positive(s.tau, f"tau of {s.label}")
        if not isinstance(s.alpha, (int, float)) or s.alpha < 0:
            raise SpecError(f"alpha of {s.label} must be >= 0")
        if s.tau_rule not in ("fixed", "linear", "quadratic"):
            raise SpecError(f"unknown tau_rule {s.tau_rule!r}")
        if p.kind == "curve" and s.tau_rule != "fixed":
            raise SpecError("curve schemes only support tau_rule = 'fixed'")
        if not 0 < s.damping <= 1:
            raise SpecError("damping must lie in (0, 1]")
        if s.solver is not None and s.solver not in ("cg", "bicgstab", "dense-lu"):
            raise SpecError(f"unknown solver {s.solver!r}")
        if not set(s.label) <= set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-."):
            raise SpecError(f"label {s.label!r} may only contain letters, digits, '_', '-' and '.'")
    if spec.end_time is None and spec.extinction_threshold is None:
        raise SpecError("an end condition is required: [run] end_time and/or extinction_threshold")
    if spec.end_time is not None:
        _positive(spec.end_time, "end_time")
    if spec.extinction_threshold is not None and not 0 < spec.extinction_threshold < 1:
        raise SpecError("extinction_threshold must lie in (0, 1)")
    if not isinstance(spec.snapshot_every, int) or spec.snapshot_every < 0:
        raise SpecError("snapshot_every must be a non-negative integer")
    if check_output:
        _check_output_dir(spec.output_dir)
    return spec


def _check_output_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SpecError(f"output directory {path} cannot be created: {exc}") from None
    if not os.access(path, os.W_OK | os.X_OK):
        raise SpecError(f"output directory {path} is not writable")


# --------------------------------------------------------------------------
# problem setup


def initial_mesh(problem):
    if problem.kind == "curve":
        if problem.shape == "circle":
            return generate_circle(problem.resolution, problem.radius)
        kwargs = {} if problem.grading_ratio is None else {"grading_ratio": problem.grading_ratio}
        return generate_parametrized_curve(problem.resolution, problem.shape, **kwargs)
    if problem.mesh_file is not None:
        return read_mesh(problem.mesh_file).validate()
    if problem.shape == "sphere":
        return generate_icosphere(problem.resolution, problem.radius)
    return generate_surface_example(
        problem.shape, problem.resolution, r1=problem.r1, r2=problem.r2, n_theta=problem.n_theta, n_phi=problem.n_phi
    )


def _solver_config(scheme, default):
    if scheme.solver is None and scheme.solver_tol is None:
        return default
    method = scheme.solver or default.method
    tol = scheme.solver_tol if scheme.solver_tol is not None else default.tol
    return SolverConfig(method, tol)


class _CurveStepper:
    def __init__(self, curve, scheme):
        self.scheme = scheme
        self.state = CsfState(curve)
        if scheme.name == "alg1":
            self.cfg = CsfConfig(scheme.alpha, scheme.tau)
            self.cfg = replace(self.cfg, solver=_solver_config(scheme, self.cfg.solver))
        else:
            cfg = BgnCurveConfig(scheme.tau, damping=scheme.damping)
            self.cfg = replace(cfg, solver=_solver_config(scheme, cfg.solver))

    @property
    def mesh(self):
        return self.state.curve

    def step(self):
        before = self.state.stability_violations
        if self.scheme.name == "alg1":
            self.state = step_csf(self.state, self.cfg)
        else:
            self.state, _ = step_bgn_curve(self.state, self.cfg)
        return ("stability-violation",) if self.state.stability_violations > before else ()

    def record(self, prev, tau, flags=()):
        alg1 = self.scheme.name == "alg1"
        return measure(
            self.mesh,
            self.state.time,
            prev,
            tau,
            self.state.solver_iterations,
            self.state.stability_lhs if alg1 else float("nan"),
            self.state.initial_energy if alg1 else float("nan"),
            flags,
        )

    def extinct(self, size, size0, threshold):
        return size < threshold * size0 or self.mesh.segment_lengths().min() < MIN_SEGMENT


class _SurfaceStepper:
    def __init__(self, surface, scheme):
        self.scheme = scheme
        self.state = McfState(surface)
        cfg = McfConfig(
            scheme.name,
            alpha=scheme.alpha,
            tau=scheme.tau,
            tau_rule=scheme.tau_rule,
            alpha_equals_tau=scheme.alpha_equals_tau,
        )
        self.cfg = replace(cfg, solver=_solver_config(scheme, cfg.solver))

    @property
    def mesh(self):
        return self.state.surface

    def step(self):
        self.state = step_mcf(self.state, self.cfg)
        return ()

    def record(self, prev, tau, flags=()):
        return measure(self.mesh, self.state.time, prev, tau, self.state.solver_iterations, flags=flags)

    def extinct(self, size, size0, threshold):
        return size < threshold * size0


_DEGENERATION = (MeshDegenerationError, DegenerateNormalError, DegenerateReferenceError, SingularKernelError, InvalidMeshError)
_SOLVER = (SolverFailure, FixedPointNonConvergence, FloatingPointError)


def _write_snapshot(directory, label, step, mesh, kind):
    directory.mkdir(parents=True, exist_ok=True)
    if kind == "curve":
        path = directory / f"{label}_step{step:07d}.csv"
        write_curve_csv(path, mesh)
    else:
        path = directory / f"{label}_step{step:07d}.vtk"
        write_mesh(path, mesh)
    return str(path)


def run_scheme(spec, scheme, mesh=None):
    """Run one scheme of ``spec`` to its end condition; returns (SchemeResult, records)."""
    t_start = wallclock.perf_counter()
    kind = spec.problem.kind
    mesh = initial_mesh(spec.problem) if mesh is None else mesh
    stepper = _CurveStepper(mesh, scheme) if kind == "curve" else _SurfaceStepper(mesh, scheme)
    out = Path(spec.output_dir)
    snap_dir = out / f"{scheme.label}_snapshots"
    snapshots = [_write_snapshot(snap_dir, scheme.label, 0, mesh, kind)] if spec.snapshot_every else []
    last_snapshot = 0
    records = [stepper.record(None, None)]
    size0 = records[0].size
    threshold = spec.extinction_threshold
    extinction_check = threshold if threshold is not None else DEFAULT_EXTINCTION
    termination, message = None, ""
    while termination is None:
        if spec.end_time is not None and stepper.state.time >= spec.end_time - 1e-9 * scheme.tau:
            termination = "end-time"
            break
        prev = stepper.mesh
        try:
            flags = stepper.step()
        except _DEGENERATION as exc:
            termination, message = "degeneration", str(exc)
            break
        except _SOLVER as exc:
            termination, message = "solver-failure", str(exc)
            break
        tau = getattr(stepper.state, "last_tau", None) or scheme.tau
        records.append(stepper.record(prev, tau, flags))
        step = stepper.state.step_index
        if spec.snapshot_every and step % spec.snapshot_every == 0:
            snapshots.append(_write_snapshot(snap_dir, scheme.label, step, stepper.mesh, kind))
            last_snapshot = step
        if stepper.extinct(records[-1].size, size0, extinction_check):
            termination = "extinction"
            if threshold is None:
                message = "size fell below the default extinction threshold before the end time"
    if spec.snapshot_every and last_snapshot != stepper.state.step_index:
        snapshots.append(_write_snapshot(snap_dir, scheme.label, stepper.state.step_index, stepper.mesh, kind))
    csv_path = out / f"{scheme.label}.csv"
    write_csv(csv_path, records)
    if termination in NUMERICAL_FAILURES:
        log.warning("%s terminated by %s: %s", scheme.label, termination, message)
    result = SchemeResult(
        label=scheme.label,
        csv_path=str(csv_path),
        snapshots=snapshots,
        termination=termination,
        message=message,
        steps=stepper.state.step_index,
        final_time=float(stepper.state.time),
        final_size=float(records[-1].size),
        wall_clock=wallclock.perf_counter() - t_start,
    )
    return result, records


def _run_scheme_only(args):
    spec, scheme = args
    return run_scheme(spec, scheme)[0]


def run_experiment(spec, parallel=False):
    """Run every scheme of ``spec`` and write CSVs, snapshots and ``manifest.json``.

    Stepper failures end the affected scheme with termination reason
    ``degeneration`` or ``solver-failure``; they never propagate.
    """
    validate_spec(spec)
    t_start = wallclock.perf_counter()
    manifest = RunManifest(spec=spec.to_dict())
    if parallel and len(spec.schemes) > 1:
        with ProcessPoolExecutor(max_workers=len(spec.schemes)) as pool:
            manifest.results = list(pool.map(_run_scheme_only, [(spec, s) for s in spec.schemes]))
    else:
        mesh = initial_mesh(spec.problem)
        manifest.results = [run_scheme(spec, s, mesh)[0] for s in spec.schemes]
    manifest.wall_clock = wallclock.perf_counter() - t_start
    with open(Path(spec.output_dir) / "manifest.json", "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
    return manifest


# --------------------------------------------------------------------------
# convergence study


class EocStudyError(DeturckFlowError):
    """A run of the study failed; ``partial`` holds the rows finished so far."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class EocStudy:
    h1: EocTable
    l2: EocTable
    steps: tuple


def circle_errors(N, alpha, end_time, c, radius=1.0, solver=None):
    """Max-over-steps (L2, H1-seminorm) errors of the alpha-scheme on a circle.

    The step size is the largest ``end_time / n`` not above ``c h^2`` with
    ``h = 2 pi / N``, so the final step lands exactly on ``end_time``.
    """
    h = TWO_PI / N
    n = max(1, math.ceil(end_time / (c * h * h) - 1e-12))
    cfg = CsfConfig(alpha, end_time / n)
    if solver is not None:
        cfg = replace(cfg, solver=solver)
    state = CsfState(generate_circle(N, radius))
    l2_max, h1_max = h1_error_vs_circle(state.curve, 0.0, radius)
    for _ in range(n):
        state = step_csf(state, cfg)
        l2, h1 = h1_error_vs_circle(state.curve, min(state.time, end_time), radius)
        l2_max, h1_max = max(l2_max, l2), max(h1_max, h1)
    return l2_max, h1_max, n, state


def run_eoc_study(spec, resolutions=None, c=None):
    """Shrinking-circle convergence study of the alpha-scheme.

    Uses the first ``alg1`` scheme of ``spec`` for alpha and the run end time.
    """
    resolutions = tuple(resolutions if resolutions is not None else spec.eoc_resolutions)
    c = spec.eoc_c if c is None else c
    if len(resolutions) < 2:
        raise SpecError("an EOC study needs at least two resolutions")
    if any(not isinstance(n, int) or n < 3 for n in resolutions) or any(
        b <= a for a, b in zip(resolutions, resolutions[1:])
    ):
        raise SpecError("resolutions must be strictly increasing integers >= 3")
    _positive(c, "c")
    if spec.problem.kind != "curve" or spec.problem.shape != "circle":
        raise SpecError("the EOC study runs on the circle problem")
    schemes = [s for s in spec.schemes if s.name == "alg1"]
    if not schemes:
        raise SpecError("the EOC study needs an alg1 scheme")
    if spec.end_time is None:
        raise SpecError("the EOC study needs [run] end_time")
    scheme = schemes[0]
    radius = spec.problem.radius
    if not spec.end_time < 0.5 * radius * radius:
        raise SpecError("end_time must lie before the extinction time radius^2 / 2")
    rows_h1, rows_l2, steps = [], [], []
    for N in resolutions:
        try:
            l2, h1, n, _ = circle_errors(N, scheme.alpha, spec.end_time, c, radius, _solver_config(scheme, SolverConfig("cg")))
        except (*_DEGENERATION, *_SOLVER) as exc:
            raise EocStudyError(f"run with N = {N} failed: {exc}", (rows_h1, rows_l2)) from exc
        h = TWO_PI / N
        rows_h1.append((h, h1))
        rows_l2.append((h, l2))
        steps.append(n)
    return EocStudy(eoc(rows_h1), eoc(rows_l2), tuple(steps))


def write_eoc_csv(path, study):
    with open(path, "w") as fh:
        fh.write("h,steps,l2_error,l2_order,h1_error,h1_order\n")
        for k, ((h, e2, o2), (_, e1, o1)) in enumerate(zip(study.l2.rows(), study.h1.rows())):
            fmt = lambda o: "" if o is None else repr(o)  # noqa: E731
            fh.write(f"{h!r},{study.steps[k]},{e2!r},{fmt(o2)},{e1!r},{fmt(o1)}\n")


def records_from(result):
    return read_csv(result.csv_path)


__all__ = [
    "DiagnosticsRecord",
    "EocStudy",
    "EocStudyError",
    "ExperimentSpec",
    "ProblemSpec",
    "RunManifest",
    "SchemeResult",
    "SchemeSpec",
    "circle_errors",
    "initial_mesh",
    "load_spec",
    "records_from",
    "run_eoc_study",
    "run_experiment",
    "run_scheme",
    "spec_from_dict",
    "validate_spec",
    "write_eoc_csv",
]
