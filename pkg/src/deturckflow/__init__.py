"""Parametric finite element schemes for curve shortening and mean curvature flow
with DeTurck-type tangential redistribution."""

from .errors import (
    AssemblyError,
    DegenerateNormalError,
    DegenerateReferenceError,
    DeturckFlowError,
    FixedPointNonConvergence,
    InvalidMeshError,
    InvalidShapeError,
    MeshDegenerationError,
    MeshParseError,
    NonManifoldError,
    SingularKernelError,
    SolverFailure,
    SpecError,
)
from .mesh import (
    PolygonalCurve,
    TriSurface,
    curve_length,
    generate_circle,
    generate_icosphere,
    generate_parametrized_curve,
    generate_surface_example,
    surface_area,
    vertex_normals_area_weighted,
)
from .assembly import BlockSparseMatrix, assemble, mass_kernel, stiffness_kernel
from .solvers import SolverConfig, solve
from .csf import BgnCurveConfig, CsfConfig, CsfState, step_bgn_curve, step_csf
from .mcf import McfConfig, McfState, step_mcf, step_mcf_alg2, step_mcf_alg3, step_mcf_bgn
from .diagnostics import DiagnosticsRecord, EocTable, eoc, extinction_time, h1_error_vs_circle, segment_ratio, sigma_max
from .fileio import read_mesh, write_mesh
from .runner import ExperimentSpec, RunManifest, load_spec, run_eoc_study, run_experiment

__version__ = "0.1.0"
