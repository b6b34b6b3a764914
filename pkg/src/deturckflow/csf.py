"""Time stepping for the curve shortening flow.

``step_csf`` is the linear semi-implicit alpha-scheme: the mass term uses the
tensor ``alpha |rho|^2 I + (1 - alpha) rho (x) rho`` built from the rotated
tangent ``rho = rot(X_theta)`` of the previous step, the stiffness term is the
plain P1 Laplacian in the parameter ``theta``.  ``alpha = 1`` gives the
Deckelnick-Dziuk scheme, ``alpha -> 0`` the normal-projection limit.

``step_bgn_curve`` is the fully implicit benchmark scheme with lumped,
normal-projected mass, solved by a (possibly damped) fixed-point iteration.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import assemble_blocks, curve_stiffness_scalar, expand_scalar, p1_mass
from .errors import FixedPointNonConvergence, InvalidMeshError, SingularKernelError
from .mesh import PolygonalCurve, rotate90
from .solvers import SolverConfig, solve

log = logging.getLogger(__name__)

STABILITY_SLACK = 1e-8


@dataclass(frozen=True)
class CsfConfig:
    alpha: float
    tau: float
    solver: SolverConfig = field(default_factory=lambda: SolverConfig("cg", tol=1e-12))

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")


@dataclass(frozen=True)
class BgnCurveConfig:
    tau: float
    threshold: float = 1e-8
    max_iterations: int = 1000
    damping: float = 1.0
    solver: SolverConfig = field(default_factory=lambda: SolverConfig("cg", tol=1e-12))

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class CsfState:
    curve: PolygonalCurve
    time: float = 0.0
    step_index: int = 0
    stability_energy_sum: float = 0.0
    initial_energy: float = None
    stability_violations: int = 0
    last_violation: float = 0.0
    solver_iterations: int = 0

    def __post_init__(self):
        if self.initial_energy is None:
            object.__setattr__(self, "initial_energy", dirichlet_energy(self.curve))

    @property
    def stability_lhs(self):
        """1/2 int |X_theta|^2 at the current step plus accumulated dissipation."""
        return dirichlet_energy(self.curve) + self.stability_energy_sum


def dirichlet_energy(curve):
    """1/2 int_0^{2 pi} |X_theta|^2 dtheta of the piecewise linear curve."""
    h = curve.parameter_spacing()
    return 0.5 * float(np.sum(np.sum(curve.segment_vectors() ** 2, axis=1) / h))


def mass_coefficients(alpha, rho):
    """alpha |rho|^2 I + (1 - alpha) rho (x) rho for each row of ``rho``."""
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    sq = np.einsum("mi,mi->m", rho, rho)
    return alpha * sq[:, None, None] * np.eye(2) + (1.0 - alpha) * rho[:, :, None] * rho[:, None, :]


def csf_element_mass_kernel(h, alpha, rho):
    """Stacked 4x4 element mass matrices of the alpha-scheme.

    ``h`` are the parameter lengths of the segments, ``rho`` the rotated
    tangents X_theta of the previous step.  Scalar arguments are accepted for
    a single segment.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    if alpha == 0.0:
        bad = np.einsum("mi,mi->m", rho, rho) <= 0.0
        if np.any(bad):
            raise SingularKernelError(
                f"degenerate segment {int(np.argmax(bad))} gives a zero mass block for alpha = 0"
            )
    coeff = mass_coefficients(alpha, rho)
    scalar = p1_mass(h, 2)
    m = scalar.shape[0]
    return (scalar[:, :, None, :, None] * coeff[:, None, :, None, :]).reshape(m, 4, 4)


def csf_matrices(curve, alpha):
    """Assembled (M, S) of the alpha-scheme on ``curve``."""
    h = curve.parameter_spacing()
    edges = curve.edges()
    M = assemble_blocks(edges, csf_element_mass_kernel(h, alpha, curve.rotated_tangent()), curve.n, 2)
    S = assemble_blocks(edges, expand_scalar(curve_stiffness_scalar(curve), 2), curve.n, 2)
    return M, S


def csf_system(curve, alpha, tau):
    M, S = csf_matrices(curve, alpha)
    x_old = curve.vertices.ravel()
    return M / tau + S, (M @ x_old) / tau, M, S


def step_csf(state, cfg, return_system=False):
    """Advance the alpha-scheme by one time step."""
    curve = state.curve
    A, b, M, S = csf_system(curve, cfg.alpha, cfg.tau)
    x_old = curve.vertices.ravel()
    result = solve(A, b, cfg.solver, x0=x_old)
    x_new = result.x
    new_curve = curve.with_vertices(x_new.reshape(-1, 2))

    dx = x_new - x_old
    dissipation = float(dx @ (M @ dx)) / cfg.tau
    e_old = dirichlet_energy(curve)
    e_new = dirichlet_energy(new_curve)
    excess = e_new + dissipation - e_old
    violations = state.stability_violations
    last = state.last_violation
    if excess > STABILITY_SLACK:
        violations += 1
        last = excess
        log.warning("stability inequality violated by %.3e at step %d", excess, state.step_index + 1)
    new_state = replace(
        state,
        curve=new_curve,
        time=(state.step_index + 1) * cfg.tau,
        step_index=state.step_index + 1,
        stability_energy_sum=state.stability_energy_sum + dissipation,
        stability_violations=violations,
        last_violation=last,
        solver_iterations=result.iterations,
    )
    if return_system:
        return new_state, (A, b)
    return new_state


# --------------------------------------------------------------------------
# benchmark scheme


def bgn_nodal_rho(curve_or_vertices, theta_spacing):
    """Nodal mean of the two adjacent values of nu_h |X_theta| = rot(X_theta)."""
    x = getattr(curve_or_vertices, "vertices", curve_or_vertices)
    seg = rotate90((np.roll(x, -1, axis=0) - x) / theta_spacing[:, None])
    return 0.5 * (seg + np.roll(seg, 1, axis=0))


def bgn_curve_system(vertices, x_old, h, S, tau):
    """Linearized system with rho frozen at ``vertices``."""
    n = x_old.shape[0]
    weights = 0.5 * (h + np.roll(h, 1))  # int phi_j dtheta
    rho = bgn_nodal_rho(vertices, h)
    blocks = weights[:, None, None] * rho[:, :, None] * rho[:, None, :] / tau
    diag = assemble_blocks(np.arange(n)[:, None], blocks, n, 2)
    rhs = (blocks @ x_old[:, :, None])[:, :, 0].ravel()
    return diag + S, rhs


def step_bgn_curve(state, cfg):
    """One step of the benchmark scheme; returns (new_state, iterations)."""
    curve = state.curve
    h = curve.parameter_spacing()
    S = assemble_blocks(curve.edges(), expand_scalar(curve_stiffness_scalar(curve), 2), curve.n, 2)
    x_old = curve.vertices
    current = x_old.copy()
    previous = current
    for it in range(1, cfg.max_iterations + 1):
        A, b = bgn_curve_system(current, x_old, h, S, cfg.tau)
        sol = solve(A, b, cfg.solver, x0=current.ravel()).x.reshape(-1, 2)
        new = cfg.damping * sol + (1.0 - cfg.damping) * current
        change = float(np.max(np.linalg.norm(new - current, axis=1)))
        previous, current = current, new
        if not np.isfinite(change):
            break
        if change < cfg.threshold:
            new_state = replace(
                state,
                curve=curve.with_vertices(current),
                time=(state.step_index + 1) * cfg.tau,
                step_index=state.step_index + 1,
                solver_iterations=it,
            )
            return new_state, it
    raise FixedPointNonConvergence(
        f"fixed-point iteration did not converge in {cfg.max_iterations} iterations "
        f"at t={state.time + cfg.tau:.6g}",
        cfg.max_iterations,
        previous,
        current,
    )


def max_vertex_speed(prev, new, tau):
    a = getattr(prev, "vertices", prev)
    b = getattr(new, "vertices", new)
    if a.shape != b.shape:
        raise InvalidMeshError(f"vertex arrays differ in shape: {a.shape} vs {b.shape}")
    return float(np.max(np.linalg.norm(b - a, axis=1))) / tau
