"""Dense linear algebra kernel: blocked LU with partial pivoting, Cholesky,
triangular solves, and the plain-text matrix format.

Everything here works on float64 numpy arrays. Only elementwise operations
and matrix products are delegated to numpy; factorizations and solves are
done locally so the Riccati solvers carry no external solver dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_BLOCK = 32


class SingularMatrixError(ArithmeticError):
    """Raised when a pivot vanishes during LU factorization."""


class NotPositiveDefiniteError(ArithmeticError):
    """Raised when Cholesky meets a non-positive pivot."""


@dataclass(frozen=True)
class LUFactors:
    """Packed LU factors: unit lower L below the diagonal, U on and above.

    ``perm`` maps factored row k to original row ``perm[k]``, so that
    ``A[perm] == L @ U``.
    """

    lu: np.ndarray
    perm: np.ndarray
    sign: float

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    def logabsdet(self) -> float:
        return float(np.sum(np.log(np.abs(np.diag(self.lu)))))

    def det(self) -> float:
        return self.sign * float(np.prod(np.diag(self.lu)))


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def lu_factor(A) -> LUFactors:
    """Right-looking blocked LU with partial (row) pivoting."""
    a = _as_square(A).copy()
    n = a.shape[0]
    perm = np.arange(n)
    sign = 1.0
    for k0 in range(0, n, _BLOCK):
        k1 = min(k0 + _BLOCK, n)
        for k in range(k0, k1):
            p = k + int(np.argmax(np.abs(a[k:, k])))
            if a[p, k] == 0.0:
                raise SingularMatrixError(f"zero pivot in column {k}")
            if p != k:
                a[[k, p]] = a[[p, k]]
                perm[[k, p]] = perm[[p, k]]
                sign = -sign
            a[k + 1:, k] /= a[k, k]
            if k + 1 < k1:
                a[k + 1:, k + 1:k1] -= np.outer(a[k + 1:, k], a[k, k + 1:k1])
        if k1 < n:
            # U12 <- L11^{-1} A12 (unit lower, panel-sized)
            for k in range(k0, k1 - 1):
                a[k + 1:k1, k1:] -= np.outer(a[k + 1:k1, k], a[k, k1:])
            a[k1:, k1:] -= a[k1:, k0:k1] @ a[k0:k1, k1:]
    return LUFactors(a, perm, sign)


def solve_lower(L, B, unit_diagonal: bool = False) -> np.ndarray:
    """Forward substitution ``L X = B`` for lower-triangular L (blocked)."""
    L = np.asarray(L, dtype=float)
    X = np.array(B, dtype=float, copy=True)
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    n = L.shape[0]
    for i0 in range(0, n, _BLOCK):
        i1 = min(i0 + _BLOCK, n)
        if i0 > 0:
            X[i0:i1] -= L[i0:i1, :i0] @ X[:i0]
        for i in range(i0, i1):
            if i > i0:
                X[i] -= L[i, i0:i] @ X[i0:i]
            if not unit_diagonal:
                X[i] /= L[i, i]
    return X[:, 0] if vec else X


def solve_upper(U, B) -> np.ndarray:
    """Back substitution ``U X = B`` for upper-triangular U (blocked)."""
    U = np.asarray(U, dtype=float)
    X = np.array(B, dtype=float, copy=True)
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    n = U.shape[0]
    for i1 in range(n, 0, -_BLOCK):
        i0 = max(i1 - _BLOCK, 0)
        if i1 < n:
            X[i0:i1] -= U[i0:i1, i1:] @ X[i1:]
        for i in range(i1 - 1, i0 - 1, -1):
            if i + 1 < i1:
                X[i] -= U[i, i + 1:i1] @ X[i + 1:i1]
            X[i] /= U[i, i]
    return X[:, 0] if vec else X


def lu_solve(f: LUFactors, B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.shape[0] != f.n:
        raise ValueError(f"right-hand side has {B.shape[0]} rows, expected {f.n}")
    Y = solve_lower(f.lu, B[f.perm], unit_diagonal=True)
    return solve_upper(f.lu, Y)


def solve(A, B) -> np.ndarray:
    """Solve ``A X = B`` by partial-pivot LU."""
    return lu_solve(lu_factor(A), B)


def inv(A) -> np.ndarray:
    A = _as_square(A)
    return lu_solve(lu_factor(A), np.eye(A.shape[0]))


def inv_and_logdet(A) -> tuple[np.ndarray, float]:
    """Inverse together with ``log|det A|`` from one factorization."""
    A = _as_square(A)
    f = lu_factor(A)
    return lu_solve(f, np.eye(A.shape[0])), f.logabsdet()


def cholesky(A) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    a = _as_square(A).copy()
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot {d:.3e} at index {j}")
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cho_solve(L, B) -> np.ndarray:
    return solve_upper(np.asarray(L).T, solve_lower(L, B))


def spd_solve(A, B) -> np.ndarray:
    """Solve with a symmetric positive definite matrix via Cholesky."""
    return cho_solve(cholesky(A), B)


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def norm_inf(M) -> float:
    """Induced infinity norm (max absolute row sum); max-abs for vectors."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    if M.ndim == 1:
        return float(np.max(np.abs(M)))
    return float(np.max(np.sum(np.abs(M), axis=1)))


def read_matrix(path) -> np.ndarray:
    """Read the plain-text format: ``rows cols`` header, then one row per line."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}:1: bad header {lines[0]!r}") from exc
    if len(lines) - 1 != rows:
        raise ValueError(f"{path}: header declares {rows} rows, found {len(lines) - 1}")
    M = np.empty((rows, cols))
    for i, ln in enumerate(lines[1:]):
        vals = ln.split()
        if len(vals) != cols:
            raise ValueError(f"{path}:{i + 2}: expected {cols} values, found {len(vals)}")
        M[i] = [float(v) for v in vals]
    return M


def format_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    out = [f"{M.shape[0]} {M.shape[1]}"]
    out += [" ".join(f"{v:.17g}" for v in row) for row in M]
    return "\n".join(out) + "\n"


def write_matrix(path, M) -> None:
    Path(path).write_text(format_matrix(M))
