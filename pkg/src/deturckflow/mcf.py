"""Time stepping for the mean curvature flow of closed surfaces in R^3.

Three linear schemes share one driver:

``alg2``
    original DeTurck reparametrization.  Consistent mass with the tensor
    ``alpha I + (1 - alpha) nu (x) nu``, P1 stiffness, and a first order
    transport matrix built from the discrete Laplacian ``w`` of the
    reference map.
``alg3``
    variant reparametrization.  Lumped mass weighted by the metric density
    ``rho = sqrt(det H)`` and projected with the vertex normals, P1
    stiffness, and a second order matrix ``D`` with the tangential projector
    on the test side.
``bgn``
    benchmark scheme: lumped normal-projected mass plus P1 stiffness.

The reference map is represented by the constant nodal vector
``surface.reference_positions``; the basis functions move with the surface,
so no inverse map is ever evaluated.
"""

from dataclasses import dataclass, replace

import numpy as np

from .assembly import (
    assembly_pattern,
    block_elements,
    check_finite_elements,
    expand_scalar,
    p1_mass,
    scalar_matrix,
    surface_stiffness_scalar,
)
from .errors import DegenerateReferenceError, MeshDegenerationError
from .mesh import max_triangle_diameter, triangle_geometry, vertex_normals_area_weighted
from .solvers import SolverConfig, batched_inverse, solve

SCHEMES = ("alg2", "alg3", "bgn")
TAU_RULES = ("fixed", "linear", "quadratic")

# default relative residual of the stepper solves; keeps the solution within
# about 1e-9 of a direct solve even for tau = 1e-2 on coarse meshes
SOLVER_TOL = 1e-13

MIN_AREA = 1e-14
MAX_SIGMA = 1e6


@dataclass(frozen=True)
class McfConfig:
    """Stepper settings.

    ``tau_rule`` selects ``tau`` (fixed), ``tau * h`` (linear) or ``tau * h^2``
    (quadratic), with ``h`` the current maximal triangle diameter.  With
    ``alpha_equals_tau`` the value of ``alpha`` is replaced by the step size.
    """

    scheme: str
    alpha: float = 1.0
    tau: float = 1e-4
    tau_rule: str = "fixed"
    alpha_equals_tau: bool = False
    solver: SolverConfig = None  # BiCGStab for alg2/alg3, CG for the symmetric bgn system
    min_area: float = MIN_AREA
    max_sigma: float = MAX_SIGMA

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.tau_rule not in TAU_RULES:
            raise ValueError(f"unknown tau rule {self.tau_rule!r}; expected one of {TAU_RULES}")
        if not self.tau > 0:
            raise ValueError("tau (or its rule coefficient) must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.solver is None:
            method = "cg" if self.scheme == "bgn" else "bicgstab"
            object.__setattr__(self, "solver", SolverConfig(method, tol=SOLVER_TOL))

    def step_size(self, surface):
        if self.tau_rule == "fixed":
            return self.tau
        h = max_triangle_diameter(surface)
        return self.tau * (h if self.tau_rule == "linear" else h * h)

    def alpha_for(self, tau):
        return tau if self.alpha_equals_tau else self.alpha


@dataclass(frozen=True)
class McfState:
    surface: object
    time: float = 0.0
    step_index: int = 0
    solver_iterations: int = 0
    last_tau: float = 0.0
    previous_vertices: np.ndarray = None  # vertices one step back, used to extrapolate the initial guess


@dataclass(frozen=True)
class ElementMetricData:
    grad_y: np.ndarray  # (M, 3, 3): rows = components of y, cols = tangential derivative
    H: np.ndarray  # (M, 3, 3)
    H_inv: np.ndarray
    rho: np.ndarray  # (M,)


def compute_element_metric(geom, y_local):
    """Per-triangle ``H = (grad y)^T grad y + nu (x) nu``, its inverse and sqrt(det H).

    ``y_local`` has shape (M, 3, 3): reference positions of the three
    vertices of each triangle.
    """
    grad_y = np.einsum("mag,mai->mgi", y_local, geom.grads)
    nu = geom.normals
    H = np.einsum("mgi,mgj->mij", grad_y, grad_y) + nu[:, :, None] * nu[:, None, :]
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    H_inv, det = batched_inverse(H)
    bad = ~(det > 0.0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateReferenceError(f"det H = {det[k]:.3e} <= 0 on triangle {k}")
    H_inv = 0.5 * (H_inv + np.swapaxes(H_inv, 1, 2))
    return ElementMetricData(grad_y, H, H_inv, np.sqrt(det))


def surface_metric(surface, geom=None):
    geom = geom or triangle_geometry(surface)
    return compute_element_metric(geom, surface.reference_positions[surface.triangles])


def discrete_map_laplacian_w(surface, solver=None, geom=None):
    """Nodal w with  int w . zeta + int grad y : grad zeta = 0  for all P1 zeta."""
    geom = geom or triangle_geometry(surface)
    n = surface.n_vertices
    mass = scalar_matrix(surface.triangles, p1_mass(geom.areas, 3), n)
    stiff = scalar_matrix(surface.triangles, surface_stiffness_scalar(geom), n)
    rhs = -(stiff @ surface.reference_positions)
    cfg = solver or SolverConfig("cg", tol=1e-12)
    w = np.empty((n, 3))
    for g in range(3):
        w[:, g] = solve(mass, rhs[:, g], cfg).x
    return w


# --------------------------------------------------------------------------
# element kernels


def alg2_mass_elements(geom, alpha):
    nu = geom.normals
    coeff = alpha * np.eye(3)[None] + (1.0 - alpha) * nu[:, :, None] * nu[:, None, :]
    return block_elements(coeff, p1_mass(geom.areas, 3))


def alg2_transport_scalar(geom, metric, w_local):
    """B_ab = int_T phi_a grad phi_b . v  with v = H^-1 (grad y)^T w linear on T."""
    v = np.einsum("mij,mgj,mcg->mci", metric.H_inv, metric.grad_y, w_local)  # (M, 3 nodes, 3)
    gv = np.einsum("mbi,mci->mbc", geom.grads, v)  # grad phi_b . v_c
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0  # int phi_a phi_c / |T|
    return geom.areas[:, None, None] * np.einsum("ac,mbc->mab", local, gv)


def lumped_projected_mass_elements(geom, nodal_normals_local, iso, proj):
    """Node-diagonal blocks (iso I + proj nu_a (x) nu_a) |T| / 3 per triangle.

    ``iso`` and ``proj`` are per-triangle coefficients, ``nodal_normals_local``
    has shape (M, 3, 3).
    """
    m = geom.areas.shape[0]
    nn = nodal_normals_local[:, :, :, None] * nodal_normals_local[:, :, None, :]
    blocks = iso[:, None, None, None] * np.eye(3) + proj[:, None, None, None] * nn  # (M, a, 3, 3)
    blocks *= (geom.areas / 3.0)[:, None, None, None]
    out = np.zeros((m, 3, 3, 3, 3))  # (m, a, beta, b, gamma)
    for a in range(3):
        out[:, a, :, a, :] = blocks[:, a]
    return out.reshape(m, 9, 9)


def alg3_d_elements(geom, metric, nodal_normals_local):
    """D block (a, b) = rho |T| (grad phi_a^T H^-1 grad phi_b) P(p_a)."""
    q = geom.grads @ metric.H_inv @ np.swapaxes(geom.grads, 1, 2)
    q *= (metric.rho * geom.areas)[:, None, None]
    proj = np.eye(3) - nodal_normals_local[:, :, :, None] * nodal_normals_local[:, :, None, :]  # (M, a, 3, 3)
    out = q[:, :, None, :, None] * proj[:, :, :, None, :]  # (m, a, beta, b, gamma)
    return out.reshape(q.shape[0], 9, 9)


# --------------------------------------------------------------------------
# systems and stepping


def mcf_element_matrices(surface, scheme, alpha, w_solver=None):
    """Stacked (mass, operator) element matrices, each of shape (M, 9, 9)."""
    geom = triangle_geometry(surface)
    tris = surface.triangles
    stiff = expand_scalar(surface_stiffness_scalar(geom), 3)
    if scheme == "alg2":
        metric = surface_metric(surface, geom)
        w = discrete_map_laplacian_w(surface, w_solver, geom)
        mass = alg2_mass_elements(geom, alpha)
        op = stiff + expand_scalar(alg2_transport_scalar(geom, metric, w[tris]), 3)
    elif scheme == "alg3":
        metric = surface_metric(surface, geom)
        nodal = vertex_normals_area_weighted(surface)[tris]
        mass = lumped_projected_mass_elements(geom, nodal, alpha * metric.rho, 1.0 - alpha * metric.rho)
        op = stiff + alg3_d_elements(geom, metric, nodal)
    elif scheme == "bgn":
        nodal = vertex_normals_area_weighted(surface)[tris]
        m = tris.shape[0]
        mass = lumped_projected_mass_elements(geom, nodal, np.zeros(m), np.ones(m))
        op = stiff
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return mass, op


_REFERENCE_CACHE = {}


def reference_stiffness(surface):
    """(stiffness data on the node pattern, triangle areas) of the reference mesh.

    Because y is affine on each triangle, the basis gradients pull back:
    grad phi_a = (grad y)^T grad_ref phi_a.  Hence
    rho |T| grad phi_a^T H^-1 grad phi_b equals the reference P1 stiffness
    entry and rho = |T_ref| / |T|.  Both are constant in time and cached per
    reference array (which surfaces share and never modify).
    """
    y = surface.reference_positions
    key = (id(y), id(surface.triangles))
    hit = _REFERENCE_CACHE.get(key)
    if hit is not None and hit[0] is y and hit[1] is surface.triangles:
        return hit[2], hit[3]
    geom = triangle_geometry(y, surface.triangles)
    bad = ~(geom.areas > 0.0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateReferenceError(f"reference triangle {k} has zero area, so det H = 0")
    pattern = assembly_pattern(surface.triangles, surface.n_vertices)
    data = pattern.scalar(surface_stiffness_scalar(geom))
    if len(_REFERENCE_CACHE) >= 8:
        _REFERENCE_CACHE.pop(next(iter(_REFERENCE_CACHE)))
    _REFERENCE_CACHE[key] = (y, surface.triangles, data, geom.areas)
    return data, geom.areas


_DIAG = np.arange(3)


def _node_blocks(weights_iso, weights_proj, normals):
    """(N, 3, 3) blocks  weights_iso I + weights_proj n (x) n."""
    return weights_iso[:, None, None] * np.eye(3) + weights_proj[:, None, None] * normals[:, :, None] * normals[:, None, :]


def _surface_operators(surface, scheme, alpha, w_solver=None):
    """Block data (nnz, 3, 3) of the mass and operator parts on the node pattern.

    The lumped schemes return the mass as (N, 3, 3) node blocks instead.
    """
    geom = triangle_geometry(surface)
    tris = surface.triangles
    n = surface.n_vertices
    pattern = assembly_pattern(tris, n)
    stiff = surface_stiffness_scalar(geom)
    eye = np.eye(3)
    if scheme == "alg2":
        metric = surface_metric(surface, geom)
        w = discrete_map_laplacian_w(surface, w_solver, geom)
        scalar = stiff + alg2_transport_scalar(geom, metric, w[tris])
        check_finite_elements(scalar)
        nu = geom.normals
        coeff = alpha * eye[None] + (1.0 - alpha) * nu[:, :, None] * nu[:, None, :]
        mass_el = p1_mass(geom.areas, 3)[:, :, :, None, None] * coeff[:, None, None]
        mass = pattern.blocks(mass_el, 3)
        op = pattern.scalar(scalar)[:, None, None] * eye
        return pattern, mass, op, False
    nodal = vertex_normals_area_weighted(surface)
    third = geom.areas / 3.0
    lumped = np.bincount(tris.ravel(), weights=np.repeat(third, 3), minlength=n)
    if scheme == "alg3":
        q_data, ref_areas = reference_stiffness(surface)
        # alpha rho |T| / 3 = alpha |T_ref| / 3
        iso = np.bincount(tris.ravel(), weights=np.repeat(alpha * ref_areas / 3.0, 3), minlength=n)
        proj = lumped - iso
        # q (I - n n^T) on the test node's normal, plus the stiffness times I
        outer = nodal[:, :, None] * nodal[:, None, :]
        op = -q_data[:, None, None] * outer[pattern.rows]
        op[:, _DIAG, _DIAG] += (pattern.scalar(stiff) + q_data)[:, None]
    elif scheme == "bgn":
        iso = np.zeros(n)
        proj = lumped
        op = pattern.scalar(stiff)[:, None, None] * eye
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    check_finite_elements(stiff)
    return pattern, _node_blocks(iso, proj, nodal), op, True


def mcf_matrices(surface, scheme, alpha, w_solver=None):
    """Return assembled (mass, operator); a step solves (mass/tau + operator) U = mass U_old / tau."""
    pattern, mass, op, lumped = _surface_operators(surface, scheme, alpha, w_solver)
    if lumped:
        mass = pattern.add_node_blocks(np.zeros_like(op), mass)
    return pattern.block_matrix(mass), pattern.block_matrix(op)


def mcf_system(surface, scheme, alpha, tau, w_solver=None):
    """System matrix and right-hand side of one step."""
    pattern, mass, op, lumped = _surface_operators(surface, scheme, alpha, w_solver)
    u = surface.vertices
    if lumped:
        A = pattern.add_node_blocks(op, mass / tau)
        b = np.einsum("nij,nj->ni", mass, u).ravel() / tau
    else:
        mass_matrix = pattern.block_matrix(mass)
        A = op + mass / tau
        b = (mass_matrix @ u.ravel()) / tau
    return pattern.block_matrix(A), b


def triangle_sigmas(surface):
    """Diameter over inradius for every triangle (inf where degenerate)."""
    return surface.triangle_shape


def check_degeneration(surface, min_area=MIN_AREA, max_sigma=MAX_SIGMA):
    sig, area = triangle_sigmas(surface)
    if not np.all(np.isfinite(surface.vertices)):
        raise MeshDegenerationError("non-finite vertex coordinates", None, None)
    amin = float(area.min())
    smax = float(np.max(sig))
    if amin < min_area or not smax <= max_sigma:
        raise MeshDegenerationError(
            f"mesh degenerated: min triangle area {amin:.3e}, sigma_max {smax:.3e}", amin, smax
        )


def step_mcf(state, cfg, return_system=False):
    """Advance ``state`` by one step of ``cfg.scheme``.

    Raises MeshDegenerationError (state is not advanced) if the new mesh has
    a triangle with area below ``cfg.min_area`` or sigma above ``cfg.max_sigma``.
    """
    surface = state.surface
    tau = cfg.step_size(surface)
    alpha = cfg.alpha_for(tau)
    A, b = mcf_system(surface, cfg.scheme, alpha, tau)
    u_old = surface.vertices.ravel()
    x0 = u_old
    if state.previous_vertices is not None and state.last_tau > 0:
        x0 = u_old + (tau / state.last_tau) * (u_old - state.previous_vertices.ravel())
    result = solve(A, b, cfg.solver, x0=x0)
    new_surface = surface.with_vertices(result.x.reshape(-1, 3))
    check_degeneration(new_surface, cfg.min_area, cfg.max_sigma)
    new_state = replace(
        state,
        surface=new_surface,
        time=(state.step_index + 1) * tau if cfg.tau_rule == "fixed" else state.time + tau,
        step_index=state.step_index + 1,
        solver_iterations=result.iterations,
        last_tau=tau,
        previous_vertices=surface.vertices,
    )
    if return_system:
        return new_state, (A, b)
    return new_state


def _with_scheme(cfg, scheme):
    if cfg.scheme == scheme:
        return cfg
    return replace(cfg, scheme=scheme, solver=None)


def step_mcf_alg2(state, cfg):
    return step_mcf(state, _with_scheme(cfg, "alg2"))


def step_mcf_alg3(state, cfg):
    return step_mcf(state, _with_scheme(cfg, "alg3"))


def step_mcf_bgn(state, cfg):
    return step_mcf(state, _with_scheme(cfg, "bgn"))
