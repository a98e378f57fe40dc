"""Sparse storage and Krylov solvers.

Storage and the matrix-vector kernel are backed by ``scipy.sparse`` CSR;
the iterative solvers (Jacobi-preconditioned CG and BiCGStab(ell)) live here so
that convergence is judged on the recomputed true residual.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a Krylov solve fails to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class Method(str, enum.Enum):
    cg = "cg"
    bicgstab = "bicgstab"


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    max_iters: Optional[int] = None  # None -> 10 * n
    method: Method = Method.cg

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        object.__setattr__(self, "method", Method(self.method))


@dataclass
class TripletBuffer:
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)

    def add(self, i, j, v):
        self.rows.append(i)
        self.cols.append(j)
        self.vals.append(v)

    def __len__(self):
        return len(self.vals)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical CSR matrix: sorted column indices, no duplicates."""

    csr: sp.csr_matrix

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    @property
    def shape(self):
        return self.csr.shape

    @property
    def indptr(self):
        return self.csr.indptr

    @property
    def indices(self):
        return self.csr.indices

    @property
    def data(self):
        return self.csr.data

    def __matmul__(self, x):
        return spmv(self, x)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    @property
    def T(self) -> "SparseMatrix":
        return from_scipy(self.csr.T)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return from_scipy(self.csr + other.csr)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return from_scipy(self.csr - other.csr)

    def __mul__(self, s: float) -> "SparseMatrix":
        return from_scipy(self.csr * float(s))

    __rmul__ = __mul__


def from_scipy(m) -> SparseMatrix:
    csr = sp.csr_matrix(m, dtype=float)
    csr.sum_duplicates()
    csr.sort_indices()
    return SparseMatrix(csr)


def to_sparse(buf, n_rows: int, n_cols: int) -> SparseMatrix:
    """Compress triplets, summing duplicates in input order."""
    rows = np.asarray(buf.rows, dtype=np.int64).ravel()
    cols = np.asarray(buf.cols, dtype=np.int64).ravel()
    vals = np.asarray(buf.vals, dtype=float).ravel()
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("triplet arrays have different lengths")
    if len(rows) and (rows.min() < 0 or rows.max() >= n_rows
                      or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("triplet index out of range")
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return from_scipy(coo.tocsr())


def spmv(A: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {A.n_cols} columns, vector {x.shape[0]}")
    return A.csr @ x


def identity(n: int) -> SparseMatrix:
    return from_scipy(sp.identity(n, format="csr"))


# ---------------------------------------------------------------------------
# Krylov solvers

def _jacobi(A: SparseMatrix) -> np.ndarray:
    d = A.diagonal().copy()
    d[d == 0.0] = 1.0
    return 1.0 / d


def _cg(A, b, x, tol_abs, maxit, dinv, project):
    r = b - A.csr @ x
    if project is not None:
        r = project(r)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = A.csr @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            return x, it, False
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        if np.sqrt(r @ r) <= tol_abs:
            return x, it, True
        z = dinv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, maxit, False


BICGSTAB_ELL = 2


def _bicgstab(A, b, x, tol_abs, maxit, dinv, project, ell=BICGSTAB_ELL):
    """BiCGStab(ell) with right Jacobi preconditioning.

    The minimal-residual part uses ``ell``-dimensional polynomials, which
    copes with the strongly complex spectrum of the coupled Cahn-Hilliard
    block where plain BiCGSTAB (``ell = 1``) stagnates.  One iteration is
    counted per two matrix-vector products.
    """
    def op(v):
        return A.csr @ (dinv * v)

    r = [b - A.csr @ x] + [None] * ell
    rt = r[0].copy()
    rt_norm = np.linalg.norm(rt)
    u = [np.zeros_like(b)] + [None] * ell
    y = np.zeros_like(b)
    rho0, alpha, omega = 1.0, 0.0, 1.0
    it = 0
    while it < maxit:
        rho0 = -omega * rho0
        for j in range(ell):
            rho1 = rt @ r[j]
            # shadow residual nearly orthogonal to r: restart with a fresh one
            if abs(rho1) <= 1e-10 * rt_norm * np.linalg.norm(r[j]) or rho0 == 0.0:
                return x + dinv * y, max(it, 1), False
            beta = alpha * rho1 / rho0
            rho0 = rho1
            for i in range(j + 1):
                u[i] = r[i] - beta * u[i]
            u[j + 1] = op(u[j])
            gamma = rt @ u[j + 1]
            if gamma == 0.0 or not np.isfinite(gamma):
                return x + dinv * y, max(it, 1), False
            alpha = rho0 / gamma
            for i in range(j + 1):
                r[i] = r[i] - alpha * u[i + 1]
            r[j + 1] = op(r[j])
            y += alpha * u[0]
            it += 1
        R = np.column_stack(r[1:])
        if not np.all(np.isfinite(R)):
            return x, it, False
        try:
            g = np.linalg.solve(R.T @ R, R.T @ r[0])
        except np.linalg.LinAlgError:
            g = np.linalg.lstsq(R, r[0], rcond=None)[0]
        for j in range(ell):
            y += g[j] * r[j]
            r[0] = r[0] - g[j] * r[j + 1]
            u[0] = u[0] - g[j] * u[j + 1]
        omega = g[-1]
        rn = np.linalg.norm(r[0])
        if rn <= tol_abs:
            return x + dinv * y, it, True
        if omega == 0.0 or not np.isfinite(rn):
            return x + dinv * y, it, False
    return x + dinv * y, it, False


def solve(
    A: SparseMatrix,
    b,
    cfg: SolverConfig = SolverConfig(),
    nullspace: Optional[str] = None,
    x0=None,
    weights=None,
) -> np.ndarray:
    """Solve ``A x = b`` to ``||b - A x|| <= rel_tol * ||b||``.

    With ``nullspace="mean_zero"`` the matrix is taken to have the
    constants as its kernel: the right-hand side is projected onto the
    orthogonal complement of the constants and the returned solution has
    zero ``weights``-weighted mean.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("matrix must be square")
    b = np.array(b, dtype=float)
    n = A.n_rows
    if b.shape != (n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},)")
    project = None
    if nullspace is not None:
        if nullspace != "mean_zero":
            raise ValueError(f"unknown nullspace {nullspace!r}")
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        bnorm = np.linalg.norm(b)
        drift = abs(b.sum()) / np.sqrt(n)
        if bnorm > 0 and drift > 1e-8 * bnorm:
            log.warning("mean_zero solve: removed inconsistent component %.3e (|b| = %.3e)",
                        drift, bnorm)

        def project(v):
            return v - v.mean()

        b = project(b)

        def finish(x):
            return x - (w @ x) / w.sum()
    else:
        def finish(x):
            return x

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    tol_abs = cfg.rel_tol * bnorm
    maxit = cfg.max_iters if cfg.max_iters is not None else 10 * n
    dinv = _jacobi(A)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    kernel = _cg if cfg.method is Method.cg else _bicgstab

    used = 0
    best_x, best = x.copy(), np.inf
    res = np.inf
    while used < maxit:
        x, it, _ = kernel(A, b, x, tol_abs, maxit - used, dinv, project)
        used += it
        r = b - A.csr @ x
        if project is not None:
            r = project(r)
        res = np.linalg.norm(r)
        if res <= tol_abs:
            return finish(x)
        if res < best:
            best_x, best = x.copy(), res
        else:
            # breakdown or divergence: restart from the best iterate so far
            x = best_x.copy()
            res = best
    raise SolverError(
        f"{cfg.method.value} did not converge in {maxit} iterations: "
        f"relative residual {res / bnorm:.3e} > {cfg.rel_tol:.1e}",
        residual=res / bnorm,
        iterations=used,
    )


def apply_dirichlet(A: SparseMatrix, b, dofs, values) -> tuple[SparseMatrix, np.ndarray]:
    """Symmetric elimination of prescribed dofs.

    Constrained rows and columns are replaced by identity, the coupling
    to the free dofs is moved to the right-hand side and the constrained
    entries of the right-hand side are set to their values.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    b = np.array(b, dtype=float)
    n = A.n_rows
    if len(dofs) and (dofs.min() < 0 or dofs.max() >= n):
        raise IndexError("constrained dof out of range")
    u, inv = np.unique(dofs, return_inverse=True)
    g = np.full(len(u), np.nan)
    for k, val in zip(inv, values):
        if not np.isnan(g[k]) and g[k] != val:
            raise ValueError(f"dof {u[k]} constrained to conflicting values {g[k]} and {val}")
        g[k] = val
    full = np.zeros(n)
    full[u] = g
    b -= A.csr @ full
    keep = np.ones(n)
    keep[u] = 0.0
    D = sp.diags(keep)
    Ac = D @ A.csr @ D + sp.diags(1.0 - keep)
    b[u] = g
    return from_scipy(Ac), b
