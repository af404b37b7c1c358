"""Thin wrappers around scipy's Krylov solvers with Jacobi preconditioning."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

CG_RTOL = 1e-12
CG_MAXITER = 100_000


class SolverError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


def jacobi(A) -> LinearOperator:
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    inv = np.where(diag != 0, 1.0 / np.where(diag != 0, diag, 1.0), 1.0)
    return LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def pcg(A, b, *, rtol=CG_RTOL, maxiter=CG_MAXITER, M=None, x0=None):
    """Solve the SPD system ``A x = b`` with Jacobi-preconditioned CG.

    The stopping test is the relative residual ``|b - A x| / |b|``; a zero
    right-hand side returns zero without iterating.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if M is None and sp.issparse(A):
        M = jacobi(A)
    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 and res > 10 * rtol:
        raise SolverError("CG did not converge", res)
    return x


def pinned_laplacian(L, components):
    """Drop one unknown per connected component of a singular Laplacian.

    ``components`` is an integer label per unknown.  Returns the reduced
    matrix and the kept indices.
    """
    first = np.unique(components, return_index=True)[1]
    keep = np.setdiff1d(np.arange(L.shape[0]), first)
    return L[keep][:, keep].tocsr(), keep


def solve_pinned(L, rhs, components, **kw):
    Lr, keep = pinned_laplacian(L, components)
    x = np.zeros(L.shape[0])
    x[keep] = pcg(Lr, rhs[keep], **kw)
    return x


def graph_components(adjacency) -> np.ndarray:
    from scipy.sparse.csgraph import connected_components

    return connected_components(adjacency, directed=False)[1]
