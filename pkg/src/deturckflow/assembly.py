"""Block sparse assembly of vector-valued P1 finite element operators.

Unknowns are ordered node-major: global index ``i * d + beta`` holds
component ``beta`` of node ``i``.  Element matrices use the same layout over
the ``k`` local nodes of an element, giving ``(d*k) x (d*k)`` blocks.

All element integrals of products of P1 functions are evaluated in closed
form::

    int_T phi_a phi_b = |T| (1 + delta_ab) / ((k)(k+1))
    int_T phi_a       = |T| / k
"""

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import AssemblyError
from .mesh import PolygonalCurve, TriSurface, triangle_areas, triangle_geometry


class BlockSparseMatrix:
    """Square ``(d*N) x (d*N)`` operator in block (BSR) or plain CSR form.

    Products use the stored matrix directly; ``csr`` converts on demand.
    """

    def __init__(self, matrix, d):
        if not sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % d:
            raise ValueError(f"shape {matrix.shape} is not a square multiple of d={d}")
        self.matrix = matrix
        self.d = d
        self._csr = matrix if sp.isspmatrix_csr(matrix) else None

    @property
    def csr(self):
        if self._csr is None:
            self._csr = self.matrix.tocsr()
        return self._csr

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_nodes(self):
        return self.matrix.shape[0] // self.d

    def __matmul__(self, x):
        return self.matrix @ x

    def __add__(self, other):
        return BlockSparseMatrix(self.csr + _csr(other), self.d)

    def __sub__(self, other):
        return BlockSparseMatrix(self.csr - _csr(other), self.d)

    def __mul__(self, scalar):
        return BlockSparseMatrix(self.matrix * scalar, self.d)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return BlockSparseMatrix(self.matrix * (1.0 / scalar), self.d)

    def transpose(self):
        return BlockSparseMatrix(self.csr.T.tocsr(), self.d)

    T = property(transpose)

    def toarray(self):
        return self.matrix.toarray()

    def diagonal(self):
        return self.matrix.diagonal()

    def entry(self, i, j, beta, gamma):
        return self.csr[i * self.d + beta, j * self.d + gamma]

    def node_pattern(self):
        """Boolean N x N sparsity pattern in node indices."""
        coo = self.csr.tocoo()
        nz = coo.data != 0
        pat = sp.coo_matrix(
            (np.ones(nz.sum(), dtype=bool), (coo.row[nz] // self.d, coo.col[nz] // self.d)),
            shape=(self.n_nodes, self.n_nodes),
        )
        return pat.tocsr().astype(bool)

    def export_matrix_market(self, path):
        scipy.io.mmwrite(str(path), self.csr)


def _csr(m):
    return m.csr if isinstance(m, BlockSparseMatrix) else sp.csr_matrix(m)


def connectivity(mesh):
    if isinstance(mesh, PolygonalCurve):
        return mesh.edges()
    if isinstance(mesh, TriSurface):
        return mesh.triangles
    return np.asarray(mesh, dtype=np.int64)


def ambient_dim(mesh):
    return 2 if isinstance(mesh, PolygonalCurve) else 3


def n_nodes(mesh):
    return mesh.n if isinstance(mesh, PolygonalCurve) else mesh.n_vertices


class AssemblyPattern:
    """Node-level sparsity structure of operators over fixed connectivity.

    Maps every entry of stacked (M, k, k) element arrays to its slot in the
    data array of an N x N CSR pattern, so repeated assemblies on a moving
    mesh only need a ``bincount`` (which sums in input order, hence
    deterministically).  Vector-valued operators store one d x d block per
    slot (BSR layout).
    """

    def __init__(self, elements, n):
        elements = np.asarray(elements, dtype=np.int64)
        m, k = elements.shape
        rows = np.repeat(elements, k, axis=1).ravel()
        cols = np.tile(elements, (1, k)).ravel()
        keys, slot = np.unique(rows * n + cols, return_inverse=True)
        self.slot = slot.ravel()
        self.indices = (keys % n).astype(np.int32)
        self.rows = keys // n
        self.indptr = np.searchsorted(self.rows, np.arange(n + 1)).astype(np.int32)
        diag = np.searchsorted(keys, np.arange(n) * (n + 1))
        self.diag_slot = np.where(diag < keys.shape[0], diag, -1)
        if np.any(self.diag_slot < 0) or np.any(keys[np.maximum(self.diag_slot, 0)] != np.arange(n) * (n + 1)):
            self.diag_slot = None  # some node lies in no element
        self.n, self.m, self.k = n, m, k
        self.nnz = keys.shape[0]
        self._block_slots = {}

    def scalar(self, element_matrices):
        """Summed (nnz,) data of (M, k, k) scalar element matrices."""
        return np.bincount(self.slot, weights=np.ravel(element_matrices), minlength=self.nnz)

    def blocks(self, element_blocks, d):
        """Summed (nnz, d, d) data of (M, k, k, d, d) element blocks."""
        idx = self._block_slots.get(d)
        if idx is None:
            idx = (self.slot[:, None] * (d * d) + np.arange(d * d)).ravel()
            self._block_slots[d] = idx
        data = np.bincount(idx, weights=np.ravel(element_blocks), minlength=self.nnz * d * d)
        return data.reshape(self.nnz, d, d)

    def scalar_matrix(self, data):
        csr = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))
        csr.has_sorted_indices = True
        return csr

    def block_matrix(self, data):
        """BlockSparseMatrix from (nnz, d, d) block data."""
        d = data.shape[-1]
        bsr = sp.bsr_matrix((data, self.indices, self.indptr), shape=(self.n * d, self.n * d))
        bsr.has_sorted_indices = True
        return BlockSparseMatrix(bsr, d)

    def add_node_blocks(self, data, node_blocks):
        """Add (N, d, d) blocks onto the diagonal slots of ``data`` in place."""
        if self.diag_slot is None:
            raise AssemblyError("connectivity leaves some node without a diagonal entry")
        data[self.diag_slot] += node_blocks
        return data


_PATTERNS = {}
_PATTERN_CACHE_SIZE = 32


def assembly_pattern(elements, n):
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    key = (n, elements.shape, hash(elements.tobytes()))
    hit = _PATTERNS.get(key)
    if hit is not None and np.array_equal(hit[0], elements):
        return hit[1]
    pattern = AssemblyPattern(elements, n)
    if len(_PATTERNS) >= _PATTERN_CACHE_SIZE:
        _PATTERNS.pop(next(iter(_PATTERNS)))
    _PATTERNS[key] = (elements.copy(), pattern)
    return pattern


def check_finite_elements(element_arrays):
    m = element_arrays.shape[0]
    finite = np.isfinite(element_arrays).reshape(m, -1).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise AssemblyError(f"element {bad} produced non-finite entries", element=bad)


def assemble_blocks(elements, element_matrices, n, d):
    """Scatter-add stacked element matrices.

    ``element_matrices`` has shape (M, d*k, d*k) in node-major layout.
    Entries are summed in element order, so the result does not depend on
    anything but the inputs.
    """
    elements = np.asarray(elements, dtype=np.int64)
    em = np.asarray(element_matrices, dtype=float)
    m, k = elements.shape
    if em.shape != (m, d * k, d * k):
        raise AssemblyError(f"element matrices have shape {em.shape}, expected {(m, d * k, d * k)}")
    check_finite_elements(em)
    blocks = em.reshape(m, k, d, k, d).transpose(0, 1, 3, 2, 4)
    pattern = assembly_pattern(elements, n)
    return pattern.block_matrix(pattern.blocks(blocks, d))


def assemble_vector(elements, element_vectors, n, d):
    """Scatter-add (M, d*k) element vectors into a length d*N vector."""
    elements = np.asarray(elements, dtype=np.int64)
    m, k = elements.shape
    dofs = (elements[:, :, None] * d + np.arange(d)[None, None, :]).ravel()
    return np.bincount(dofs, weights=np.asarray(element_vectors).ravel(), minlength=n * d)


def assemble(mesh, element_kernel):
    """Assemble ``element_kernel(mesh)`` (stacked per-element matrices) over ``mesh``."""
    return assemble_blocks(connectivity(mesh), element_kernel(mesh), n_nodes(mesh), ambient_dim(mesh))


def expand_scalar(scalar_blocks, d):
    """Turn (M, k, k) scalar element matrices into (M, d*k, d*k) blocks times I_d."""
    s = np.asarray(scalar_blocks)
    m, k, _ = s.shape
    out = s[:, :, None, :, None] * np.eye(d)[None, None, :, None, :]
    return out.reshape(m, d * k, d * k)


def block_elements(coeff, scalar):
    """(M, d, d) coefficient blocks times (M, k, k) scalar integrals -> (M, d*k, d*k)."""
    c = np.asarray(coeff)
    s = np.asarray(scalar)
    m, k, _ = s.shape
    d = c.shape[-1]
    out = s[:, :, None, :, None] * c[:, None, :, None, :]
    return out.reshape(m, d * k, d * k)


def scalar_matrix(elements, scalar_blocks, n):
    """Assemble an N x N scalar matrix from (M, k, k) element matrices."""
    pattern = assembly_pattern(elements, n)
    return pattern.scalar_matrix(pattern.scalar(np.asarray(scalar_blocks, dtype=float)))


# --------------------------------------------------------------------------
# closed-form P1 element integrals


def p1_mass(measure, k):
    """(M, k, k) consistent mass matrices of simplices with the given measures."""
    local = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return np.asarray(measure)[:, None, None] * local


def segment_measures(curve):
    """Parameter-interval lengths of a curve's segments (integration is in theta)."""
    return curve.parameter_spacing()


def curve_stiffness_scalar(curve):
    h = curve.parameter_spacing()
    local = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return local[None] / h[:, None, None]


def surface_stiffness_scalar(geom):
    # grad phi_1, grad phi_2 are the dual basis of (p1 - p0, p2 - p0), so their
    # inner products are the inverse metric entries; grad phi_0 = -(grad phi_1 + grad phi_2)
    a, b, c = (geom.areas[:, None] * geom.inverse_metric).T
    k01, k02 = -(a + b), -(b + c)
    k00 = a + 2.0 * b + c
    return np.stack([k00, k01, k02, k01, a, b, k02, b, c], axis=1).reshape(-1, 3, 3)


def stiffness_kernel(mesh):
    """Element matrices of delta_{beta gamma} int grad phi_i . grad phi_j."""
    if isinstance(mesh, PolygonalCurve):
        return expand_scalar(curve_stiffness_scalar(mesh), 2)
    return expand_scalar(surface_stiffness_scalar(triangle_geometry(mesh)), 3)


def mass_kernel(mesh):
    """Element matrices of delta_{beta gamma} int phi_i phi_j."""
    if isinstance(mesh, PolygonalCurve):
        return expand_scalar(p1_mass(segment_measures(mesh), 2), 2)
    return expand_scalar(p1_mass(triangle_areas(mesh.vertices, mesh.triangles), 3), 3)


def lumped_mass_integrals(mesh):
    """Per-vertex weights sum_{T containing p} int_T phi_p = sum |T| / k.

    For curves the measure is the physical segment length.
    """
    if isinstance(mesh, PolygonalCurve):
        measure, elements = mesh.segment_lengths(), mesh.edges()
    else:
        measure, elements = triangle_areas(mesh.vertices, mesh.triangles), mesh.triangles
    k = elements.shape[1]
    return np.bincount(elements.ravel(), weights=np.repeat(measure / k, k), minlength=n_nodes(mesh))
