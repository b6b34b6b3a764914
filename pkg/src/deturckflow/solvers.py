"""Krylov solvers for the assembled systems, plus a dense LU oracle.

Convergence is declared on the true relative residual
``||b - A x|| <= tol * ||b||``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import BlockSparseMatrix
from .errors import SolverFailure
from .mesh import cross3

METHODS = ("cg", "bicgstab", "dense-lu")
DENSE_LIMIT = 512


@dataclass(frozen=True)
class SolverConfig:
    method: str = "cg"
    tol: float = 1e-10
    max_iter: int = None  # default 10 * system size
    jacobi: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; expected one of {METHODS}")
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def with_method(self, method):
        return SolverConfig(method, self.tol, self.max_iter, self.jacobi)


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float  # final true relative residual
    history: list = field(default_factory=list)  # relative residual per iteration


def _jacobi(A, op):
    """Inverse (block) diagonal of ``A`` as a preconditioner callable.

    Block operators use their d x d node blocks, which captures strongly
    anisotropic per-node couplings that a scalar diagonal misses.
    """
    if isinstance(A, BlockSparseMatrix) and A.d > 1:
        blocks = _diagonal_blocks(A)
        n, d = A.n_nodes, A.d
        inv, _ = batched_inverse(blocks)
        if np.all(np.isfinite(inv)):
            return lambda v: np.einsum("nij,nj->ni", inv, v.reshape(n, d)).ravel()
    diag = op.diagonal() if sp.issparse(op) else np.diag(op).copy()
    inv_diag = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    return lambda v: v * inv_diag


def batched_inverse(a):
    """Inverse and determinant of stacked (M, d, d) matrices.

    Uses the adjugate for d <= 3 (much cheaper than LAPACK on many tiny
    matrices); singular entries come back non-finite.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    if d == 1:
        det = a[:, 0, 0].copy()
        adj = np.ones_like(a)
    elif d == 2:
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        adj = np.stack([np.stack([a[:, 1, 1], -a[:, 0, 1]], -1), np.stack([-a[:, 1, 0], a[:, 0, 0]], -1)], 1)
    elif d == 3:
        c0, c1, c2 = a[:, :, 0], a[:, :, 1], a[:, :, 2]
        adj = np.stack([cross3(c1, c2), cross3(c2, c0), cross3(c0, c1)], axis=1)
        det = np.einsum("mi,mi->m", c0, adj[:, 0])
    else:
        det = np.linalg.det(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.linalg.pinv(a) * np.where(det != 0.0, 1.0, np.nan)[:, None, None], det
    with np.errstate(divide="ignore", invalid="ignore"):
        return adj / det[:, None, None], det


def _diagonal_blocks(A):
    d, n = A.d, A.n_nodes
    m = A.matrix
    if sp.isspmatrix_bsr(m) and m.blocksize == (d, d):
        rows = np.repeat(np.arange(n), np.diff(m.indptr))
        hit = m.indices == rows
        if np.count_nonzero(hit) == n:
            return m.data[hit]
    csr = A.csr
    rows = np.repeat(np.arange(n * d), d)
    cols = ((np.arange(n * d) // d * d)[:, None] + np.arange(d)).ravel()
    return np.asarray(csr[rows, cols]).reshape(n, d, d)


def _as_operator(A):
    if isinstance(A, BlockSparseMatrix):
        return A.matrix
    if sp.issparse(A):
        return A.tocsr()
    return np.asarray(A, dtype=float)


def solve(A, b, cfg=None, x0=None, callback=None):
    """Solve ``A x = b`` with the method selected in ``cfg``.

    ``callback(x)`` is invoked with each Krylov iterate.
    Raises SolverFailure when the tolerance is not met within ``max_iter``.
    """
    cfg = cfg or SolverConfig()
    original = A
    A = _as_operator(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b has {b.shape}")
    if cfg.method == "dense-lu":
        return dense_lu_solve(A, b)
    max_iter = cfg.max_iter if cfg.max_iter is not None else 10 * b.shape[0]
    x0 = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    prec = _jacobi(original, A) if cfg.jacobi else None
    if cfg.method == "cg":
        return conjugate_gradient(A, b, x0, cfg.tol, max_iter, prec, callback)
    return bicgstab(A, b, x0, cfg.tol, max_iter, prec, callback)


def dense_lu_solve(A, b):
    n = b.shape[0]
    if n > DENSE_LIMIT:
        raise ValueError(f"dense LU oracle is limited to {DENSE_LIMIT} unknowns, got {n}")
    dense = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    try:
        lu = scipy.linalg.lu_factor(dense, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverFailure(f"dense LU failed: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) <= 1e-300):
        raise SolverFailure("dense LU: matrix is singular", residual=np.inf)
    x = scipy.linalg.lu_solve(lu, b)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(b - dense @ x) / (bn if bn > 0 else 1.0)
    return SolveResult(x, 1, res, [res])


def conjugate_gradient(A, b, x0, tol, max_iter, prec=None, callback=None):
    """Preconditioned conjugate gradients for SPD systems.

    ``prec(r)`` applies an SPD preconditioner; None means the identity.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros_like(b), 0, 0.0, [0.0])
    x = x0.copy()
    r = b - A @ x
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return SolveResult(x, 0, history[-1], history)
    z = prec(r) if prec is not None else r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            raise SolverFailure("CG breakdown: matrix is not positive definite", history[-1], it)
        step = rz / pAp
        x += step * p
        r -= step * Ap
        if callback is not None:
            callback(x)
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if rel <= tol:
            true_rel = np.linalg.norm(b - A @ x) / bnorm
            if true_rel <= tol:
                return SolveResult(x, it, true_rel, history)
            r = b - A @ x  # drifted recurrence; restart from the true residual
        z = prec(r) if prec is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailure("CG did not converge", history[-1], max_iter)


def bicgstab(A, b, x0, tol, max_iter, prec=None, callback=None):
    """Right preconditioned BiCGStab for general nonsingular systems."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros_like(b), 0, 0.0, [0.0])
    if prec is None:
        def prec(v):
            return v

    x = x0.copy()
    r = b - A @ x
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return SolveResult(x, 0, history[-1], history)
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, max_iter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0 or omega == 0.0:
            # breakdown: restart with the current residual as shadow vector
            r = b - A @ x
            r_hat = r.copy()
            rho_new = r_hat @ r
            p = np.zeros_like(b)
            v = np.zeros_like(b)
            rho = alpha = omega = 1.0
            if rho_new == 0.0:
                raise SolverFailure("BiCGStab breakdown", history[-1], it)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = prec(p)
        v = A @ p_hat
        denom = r_hat @ v
        if denom == 0.0:
            raise SolverFailure("BiCGStab breakdown (r_hat . v = 0)", history[-1], it)
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * p_hat
            true_rel = np.linalg.norm(b - A @ x) / bnorm
            history.append(true_rel)
            if callback is not None:
                callback(x)
            if true_rel <= tol:
                return SolveResult(x, it, true_rel, history)
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v = np.zeros_like(b)
            p = np.zeros_like(b)
            continue
        s_hat = prec(s)
        t = A @ s_hat
        tt = t @ t
        omega = (t @ s) / tt if tt > 0.0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        if callback is not None:
            callback(x)
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if not np.isfinite(rel):
            raise SolverFailure("BiCGStab diverged", rel, it)
        if rel <= tol:
            true_rel = np.linalg.norm(b - A @ x) / bnorm
            if true_rel <= tol:
                return SolveResult(x, it, true_rel, history)
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v = np.zeros_like(b)
            p = np.zeros_like(b)
    raise SolverFailure("BiCGStab did not converge", history[-1], max_iter)
