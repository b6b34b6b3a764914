"""Polygonal curves, closed triangulated surfaces and their generators.

Curves live in R^2 and are parametrized over a periodic grid ``theta`` in
[0, 2*pi).  Surfaces live in R^3 and carry a second vertex array,
``reference_positions``, holding the nodal values of the piecewise linear map
from the moving surface back to the reference mesh.  That array never changes
while the surface moves.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import DegenerateNormalError, InvalidMeshError, InvalidShapeError, NonManifoldError

TWO_PI = 2.0 * np.pi


def rotate90(v):
    """Rotate 2d vectors by +90 degrees: (a, b) -> (-b, a)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# --------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class PolygonalCurve:
    """Closed polygon; segment j joins vertex j to vertex (j+1) mod N."""

    vertices: np.ndarray
    theta: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidMeshError(f"curve vertices must have shape (N, 2), got {v.shape}")
        if v.shape[0] < 3:
            raise InvalidMeshError(f"a closed curve needs at least 3 vertices, got {v.shape[0]}")
        if self.theta is None:
            th = TWO_PI * np.arange(v.shape[0]) / v.shape[0]
        else:
            th = np.array(self.theta, dtype=float)
            if th.shape != (v.shape[0],):
                raise InvalidMeshError("theta must hold one parameter value per vertex")
            if np.any(np.diff(th) <= 0) or th[0] < 0 or th[-1] >= TWO_PI:
                raise InvalidMeshError("theta must be strictly increasing in [0, 2*pi)")
        v.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "theta", th)

    @property
    def n(self):
        return self.vertices.shape[0]

    def edges(self):
        """Segment connectivity, shape (N, 2)."""
        i = np.arange(self.n)
        return np.stack([i, (i + 1) % self.n], axis=1)

    def segment_vectors(self):
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def segment_lengths(self):
        return np.linalg.norm(self.segment_vectors(), axis=1)

    def parameter_spacing(self):
        """Grid size of each parameter interval [theta_j, theta_{j+1}]."""
        return np.diff(np.append(self.theta, self.theta[0] + TWO_PI))

    def tangent_derivative(self):
        """X_theta on each segment (piecewise constant)."""
        return self.segment_vectors() / self.parameter_spacing()[:, None]

    def rotated_tangent(self):
        """X_theta rotated by +90 degrees on each segment."""
        return rotate90(self.tangent_derivative())

    def validate(self):
        lengths = self.segment_lengths()
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidMeshError("curve has non-finite vertex coordinates")
        if np.any(lengths <= 0.0):
            j = int(np.argmin(lengths))
            raise InvalidMeshError(f"segment {j} has zero length")
        return self

    def with_vertices(self, vertices):
        return PolygonalCurve(vertices, self.theta)


@dataclass(frozen=True)
class SegmentGeometry:
    endpoints: np.ndarray  # (N, 2, 2)
    lengths: np.ndarray  # (N,)
    rotated_edges: np.ndarray  # (N, 2), edge vector rotated by +90 deg, |.| = length
    normals: np.ndarray  # (N, 2) unit


def segment_geometry(curve):
    e = curve.segment_vectors()
    lengths = np.linalg.norm(e, axis=1)
    rot = rotate90(e)
    endpoints = np.stack([curve.vertices, np.roll(curve.vertices, -1, axis=0)], axis=1)
    return SegmentGeometry(endpoints, lengths, rot, rot / lengths[:, None])


def curve_length(curve):
    return float(np.sum(curve.segment_lengths()))


def generate_circle(N, R=1.0):
    if N < 3:
        raise InvalidMeshError(f"a circle polygon needs N >= 3, got {N}")
    if R <= 0:
        raise InvalidMeshError("radius must be positive")
    theta = TWO_PI * np.arange(N) / N
    return PolygonalCurve(R * np.column_stack([np.cos(theta), np.sin(theta)]), theta)


def graded_circle_angles(N, grading_ratio):
    """Vertex angles on the unit circle whose chord lengths decrease
    geometrically anti-clockwise from (1, 0), with max/min chord = ratio."""
    if grading_ratio < 1:
        raise InvalidShapeError("grading ratio must be >= 1")
    q = grading_ratio ** (-1.0 / (N - 1))
    rel = q ** np.arange(N)

    def excess(c0):
        return np.sum(2.0 * np.arcsin(np.minimum(c0 * rel / 2.0, 1.0))) - TWO_PI

    c0 = brentq(excess, 1e-12, 2.0, xtol=1e-15, rtol=1e-15)
    arcs = 2.0 * np.arcsin(c0 * rel / 2.0)
    angles = np.concatenate([[0.0], np.cumsum(arcs[:-1])])
    return angles


CURVE_SHAPES = ("example1_flattened_circle", "example2_fourpetal", "example3_graded_circle")


DEFAULT_GRADING_RATIO = 1.5


def generate_parametrized_curve(N, shape, grading_ratio=DEFAULT_GRADING_RATIO):
    """Initial curves of the numerical examples.

    Vertices sit at the images of the uniform parameter grid, except for
    ``example3_graded_circle`` where the parameter grid stays uniform but the
    vertices are placed non-uniformly on the unit circle.
    """
    if N < 3:
        raise InvalidMeshError(f"N must be >= 3, got {N}")
    theta = TWO_PI * np.arange(N) / N
    if shape == "example1_flattened_circle":
        x = np.cos(theta)
        y = (0.9 * np.cos(theta) ** 2 + 0.1) * np.sin(theta)
    elif shape == "example2_fourpetal":
        r = np.cos(2.0 * theta)
        x, y = r * np.cos(theta), r * np.sin(theta)
    elif shape == "example3_graded_circle":
        phi = graded_circle_angles(N, grading_ratio)
        x, y = np.cos(phi), np.sin(phi)
    else:
        raise InvalidShapeError(f"unknown curve shape {shape!r}; expected one of {CURVE_SHAPES}")
    return PolygonalCurve(np.column_stack([x, y]), theta)


# --------------------------------------------------------------------------
# surfaces


def _frozen(a, dtype):
    """Share read-only arrays between surfaces instead of copying them."""
    if isinstance(a, np.ndarray) and a.dtype == dtype and not a.flags.writeable:
        return a
    return np.array(a, dtype=dtype)


@dataclass(frozen=True, eq=False)
class TriSurface:
    vertices: np.ndarray
    triangles: np.ndarray
    reference_positions: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        t = _frozen(self.triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidMeshError(f"surface vertices must have shape (N, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise InvalidMeshError(f"triangles must have shape (M, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise InvalidMeshError("triangle references a vertex index out of range")
        if self.reference_positions is None:
            y = v.copy()
        else:
            y = _frozen(self.reference_positions, float)
            if y.shape != v.shape:
                raise InvalidMeshError("reference_positions must match the vertex array shape")
        for a in (v, t, y):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "reference_positions", y)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    # the vertex arrays are read-only, so per-triangle data is computed once per surface

    @cached_property
    def geometry(self):
        """TriangleGeometry of the current vertex positions."""
        geom = _geometry(self.vertices, self.triangles)
        for a in (geom.points, geom.areas, geom.normals, geom.grads, geom.area_normals, geom.edge_lengths, geom.inverse_metric):
            a.setflags(write=False)
        return geom

    @cached_property
    def triangle_shape(self):
        """Per-triangle (sigma, area)."""
        sig, area = _shape(self.geometry)
        sig.setflags(write=False)
        return sig, area

    def with_vertices(self, vertices):
        """Same connectivity and reference map, new vertex positions."""
        return TriSurface(vertices, self.triangles, self.reference_positions)

    def flipped(self):
        return TriSurface(self.vertices, self.triangles[:, ::-1], self.reference_positions)

    def reference_surface(self):
        return TriSurface(self.reference_positions, self.triangles)

    def validate(self):
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidMeshError("surface has non-finite vertex coordinates")
        check_closed_manifold(self.triangles, self.n_vertices)
        for name, pts in (("surface", self.vertices), ("reference", self.reference_positions)):
            areas = triangle_areas(pts, self.triangles)
            if np.any(areas <= 0.0):
                k = int(np.argmin(areas))
                raise InvalidMeshError(f"{name} triangle {k} is degenerate (area {areas[k]:.3e})")
        return self


def check_closed_manifold(triangles, n_vertices=None):
    """Every directed edge must occur once and its reverse once."""
    t = np.asarray(triangles, dtype=np.int64)
    if t.shape[0] == 0:
        raise NonManifoldError("surface has no triangles")
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    if np.any(directed[:, 0] == directed[:, 1]):
        raise NonManifoldError("triangle with repeated vertex index")
    n = int(t.max()) + 1 if n_vertices is None else n_vertices
    key = directed[:, 0] * n + directed[:, 1]
    rkey = directed[:, 1] * n + directed[:, 0]
    uniq, counts = np.unique(key, return_counts=True)
    if np.any(counts > 1):
        e = uniq[counts > 1][0]
        raise NonManifoldError(
            f"edge ({e // n}, {e % n}) is used twice with the same orientation "
            "(non-manifold or inconsistently oriented)"
        )
    missing = ~np.isin(rkey, uniq)
    if np.any(missing):
        a, b = directed[np.argmax(missing)]
        raise NonManifoldError(f"edge ({a}, {b}) has only one incident triangle (dangling edge)")
    used = np.zeros(n, dtype=bool)
    used[t.ravel()] = True
    if not used.all():
        raise NonManifoldError(f"vertex {int(np.argmin(used))} is not part of any triangle")


def cross3(a, b):
    """Row-wise cross product of (..., 3) arrays; cheaper than np.cross on many short rows."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def triangle_areas(points, triangles):
    p = np.asarray(points)[triangles]
    return 0.5 * np.linalg.norm(cross3(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def triangle_shape(points, triangles):
    """(diameter / inradius, area) of every triangle; sigma is inf where the area vanishes."""
    return _shape(_geometry(np.asarray(points, dtype=float), np.asarray(triangles)))


def _shape(geom):
    edges = geom.edge_lengths
    area = geom.areas
    with np.errstate(divide="ignore", invalid="ignore"):
        sig = edges.max(axis=1) * edges.sum(axis=1) / (2.0 * area)
    return np.where(area > 0.0, sig, np.inf), area


@dataclass(frozen=True)
class TriangleGeometry:
    """Per-triangle data of a piecewise linear surface.

    ``grads[k, a]`` is the tangential gradient of the nodal basis function of
    local vertex ``a`` on triangle ``k``.
    """

    points: np.ndarray  # (M, 3, 3)
    areas: np.ndarray  # (M,)
    normals: np.ndarray  # (M, 3)
    grads: np.ndarray  # (M, 3, 3)
    area_normals: np.ndarray  # (M, 3) |T| nu_T, zero for degenerate triangles
    edge_lengths: np.ndarray  # (M, 3)
    inverse_metric: np.ndarray  # (M, 3) entries (11, 12, 22) of (E^T E)^{-1} for E = [p1 - p0, p2 - p0]


def triangle_geometry(surface_or_points, triangles=None):
    """TriangleGeometry of a surface (cached on it) or of a point array with triangles."""
    if triangles is None:
        return surface_or_points.geometry
    return _geometry(surface_or_points, triangles)


def _geometry(points, triangles):
    p = np.asarray(points)[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    n = cross3(e1, e2)
    nn = np.sqrt(np.einsum("ij,ij->i", n, n))
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        # columns of E (E^T E)^{-1}
        grad1 = (g22[:, None] * e1 - g12[:, None] * e2) / det[:, None]
        grad2 = (g11[:, None] * e2 - g12[:, None] * e1) / det[:, None]
        normals = n / nn[:, None]
    grads = np.stack([-grad1 - grad2, grad1, grad2], axis=1)
    e3 = p[:, 2] - p[:, 1]
    edges = np.sqrt(np.stack([g11, np.einsum("ij,ij->i", e3, e3), g22], axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_metric = np.stack([g22, -g12, g11], axis=1) / det[:, None]
    return TriangleGeometry(p, 0.5 * nn, normals, grads, 0.5 * n, edges, inv_metric)


def surface_area(surface):
    return float(np.sum(triangle_areas(surface.vertices, surface.triangles)))


_INCIDENCE_CACHE = {}


def vertex_triangle_incidence(triangles, n_vertices):
    """Sparse (N, M) 0/1 matrix with a one where vertex i belongs to triangle k.

    Cached per (read-only) triangle array, which moving surfaces share.
    """
    key = (id(triangles), n_vertices)
    hit = _INCIDENCE_CACHE.get(key)
    if hit is not None and hit[0] is triangles:
        return hit[1]
    m = triangles.shape[0]
    inc = sp.csr_matrix(
        (np.ones(3 * m), (triangles.ravel(), np.repeat(np.arange(m), 3))), shape=(n_vertices, m)
    )
    if len(_INCIDENCE_CACHE) >= 8:
        _INCIDENCE_CACHE.pop(next(iter(_INCIDENCE_CACHE)))
    _INCIDENCE_CACHE[key] = (triangles, inc)
    return inc


def vertex_normals_area_weighted(surface):
    """Normalized sum of incident triangle normals weighted by area."""
    acc = vertex_triangle_incidence(surface.triangles, surface.n_vertices) @ surface.geometry.area_normals
    norms = np.linalg.norm(acc, axis=1)
    bad = norms <= 1e-300
    if np.any(bad):
        raise DegenerateNormalError(f"area-weighted normal vanishes at vertex {int(np.argmax(bad))}")
    return acc / norms[:, None]


def max_triangle_diameter(surface):
    p = surface.vertices[surface.triangles]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return float(np.linalg.norm(edges, axis=2).max())


_ICO_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array(
    [
        [-1, _ICO_PHI, 0], [1, _ICO_PHI, 0], [-1, -_ICO_PHI, 0], [1, -_ICO_PHI, 0],
        [0, -1, _ICO_PHI], [0, 1, _ICO_PHI], [0, -1, -_ICO_PHI], [0, 1, -_ICO_PHI],
        [_ICO_PHI, 0, -1], [_ICO_PHI, 0, 1], [-_ICO_PHI, 0, -1], [-_ICO_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def icosahedron():
    """Regular icosahedron with edge length 2 (not projected)."""
    return _ICO_VERTICES.copy(), _ICO_FACES.copy()


def _subdivide(vertices, faces):
    verts = list(map(tuple, vertices))
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            idx = len(verts)
            verts.append(tuple((np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0))
            cache[key] = idx
        return idx

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts), np.array(out, dtype=np.int64)


def generate_icosphere(subdivisions, R=1.0):
    if subdivisions < 0:
        raise InvalidMeshError("subdivisions must be >= 0")
    v, f = icosahedron()
    v /= np.linalg.norm(v, axis=1)[:, None]
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
        v /= np.linalg.norm(v, axis=1)[:, None]
    v = R * v
    return TriSurface(v, f, v.copy())


def _dumbbell(points, a, b):
    # X_0(theta, phi) = (cos phi, (a cos^2 phi + b) cos theta sin phi, ...)
    # evaluated at the sphere point (cos phi, cos theta sin phi, sin theta sin phi)
    x = points[:, 0]
    scale = a * x ** 2 + b
    return np.column_stack([x, scale * points[:, 1], scale * points[:, 2]])


def torus_grid(r1, r2, n_theta, n_phi, undulation=0.0):
    """Structured (theta, phi) torus triangulation, outward oriented.

    Returns (vertices, triangles, standard torus vertices).
    """
    theta = TWO_PI * np.arange(n_theta) / n_theta
    phi = TWO_PI * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(theta, phi, indexing="ij")
    ring = r1 + r2 * np.cos(P)
    ref = np.stack([ring * np.cos(T), ring * np.sin(T), r2 * np.sin(P)], axis=-1).reshape(-1, 3)
    pos = ref.copy()
    pos[:, 2] += undulation * np.sin(6.0 * T).ravel()
    i, j = np.meshgrid(np.arange(n_theta), np.arange(n_phi), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * n_phi + j
    b = ((i + 1) % n_theta) * n_phi + j
    c = ((i + 1) % n_theta) * n_phi + (j + 1) % n_phi
    d = i * n_phi + (j + 1) % n_phi
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return pos, tris, ref


SURFACE_SHAPES = ("dumbbell_07", "dumbbell_06", "undulating_torus", "sphere")


def generate_surface_example(shape, subdivisions=4, r1=1.0, r2=0.6, n_theta=None, n_phi=None):
    """Initial surfaces of the numerical examples.

    Dumbbells map the vertices of an icosphere of the given subdivision level;
    the icosphere stays the reference.  The undulating torus uses an
    ``n_theta x n_phi`` grid (default 2^(subdivisions+3) x 2^(subdivisions+2))
    over the standard torus, which is also its reference.
    """
    if shape in ("dumbbell_07", "dumbbell_06"):
        ref = generate_icosphere(subdivisions, 1.0)
        a, b = (0.7, 0.3) if shape == "dumbbell_07" else (0.6, 0.4)
        return TriSurface(_dumbbell(ref.vertices, a, b), ref.triangles, ref.vertices)
    if shape == "sphere":
        return generate_icosphere(subdivisions, 1.0)
    if shape == "undulating_torus":
        if r1 <= 0 or r2 <= 0:
            raise InvalidShapeError("torus radii must be positive")
        if r2 >= r1:
            raise InvalidShapeError(f"torus with r2={r2} >= r1={r1} self-intersects")
        if n_phi is None:
            n_phi = 2 ** (subdivisions + 2)
        if n_theta is None:
            n_theta = 2 * n_phi
        if n_theta < 3 or n_phi < 3:
            raise InvalidShapeError("torus grid needs at least 3 x 3 cells")
        pos, tris, ref = torus_grid(r1, r2, n_theta, n_phi, undulation=0.2)
        return TriSurface(pos, tris, ref)
    raise InvalidShapeError(f"unknown surface shape {shape!r}; expected one of {SURFACE_SHAPES}")
