import numpy as np
import pytest

from deturckflow.mesh import TriSurface, generate_icosphere


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


def random_rotation(rng, dim=3):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def perturbed_sphere(rng, subdivisions=2, amplitude=0.1, reference_amplitude=0.0):
    """Icosphere with radial noise on the vertices and (optionally) on Y."""
    s = generate_icosphere(subdivisions)
    v = s.vertices
    r = 1.0 + amplitude * rng.uniform(-1, 1, size=(v.shape[0], 1))
    ry = 1.0 + reference_amplitude * rng.uniform(-1, 1, size=(v.shape[0], 1))
    return TriSurface(v * r, s.triangles, v * ry)


def _frame(x, y):
    e1 = x / np.linalg.norm(x)
    e2 = y - (y @ e1) * e1
    e2 /= np.linalg.norm(e2)
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def icosahedral_rotations():
    """The 60 rotations mapping the base icosahedron onto itself.

    The group acts simply transitively on directed edges, so each directed
    edge (p, q) is the image of one fixed edge under exactly one rotation.
    """
    from deturckflow.mesh import icosahedron

    v, f = icosahedron()
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    edges = {(a, b) for tri in f for a, b in zip(tri, np.roll(tri, -1))}
    a, b = next(iter(sorted(edges)))
    base = _frame(v[a], v[b])
    return [_frame(v[p], v[q]) @ base.T for p, q in sorted(edges)]


def vertex_permutations(vertices, rotations):
    """For each rotation R, the permutation with R v[i] = v[perm[i]]."""
    from scipy.spatial import cKDTree

    tree = cKDTree(vertices)
    perms = []
    for R in rotations:
        dist, idx = tree.query(vertices @ R.T)
        assert dist.max() < 1e-9, "mesh is not invariant under the rotation"
        perms.append(idx)
    return perms


def vertex_orbits(n, perms):
    """Orbit label per vertex under the group generated by ``perms``."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    rows = np.concatenate([np.arange(n)] * len(perms))
    cols = np.concatenate(perms)
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return connected_components(graph, directed=False)[1]


def max_orbit_spread(values, orbits):
    spread = 0.0
    for k in np.unique(orbits):
        v = values[orbits == k]
        spread = max(spread, float(v.max() - v.min()))
    return spread
