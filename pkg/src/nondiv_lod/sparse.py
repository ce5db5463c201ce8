"""Sparse matrix helpers and a pivoted direct solver.

Matrices are ``scipy.sparse.csr_matrix`` objects in canonical form (sorted,
duplicate-free column indices).  Factorizations use SuperLU with partial
pivoting, which handles the zero diagonal blocks of the bordered corrector
systems.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# relative residual checked after every solve when set (tests switch it on)
DEBUG_RESIDUAL_TOL: float | None = None


class SingularMatrixError(RuntimeError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


def canonical(m) -> sp.csr_matrix:
    """CSR copy with summed duplicates and sorted column indices."""
    out = sp.csr_matrix(m, copy=True)
    out.sum_duplicates()
    out.sort_indices()
    return out


def transpose(m: sp.csr_matrix) -> sp.csr_matrix:
    return canonical(m.T)


def matvec(m: sp.csr_matrix, x: np.ndarray, transposed: bool = False) -> np.ndarray:
    x = np.asarray(x)
    rows, cols = m.shape
    if x.shape[0] != (rows if transposed else cols):
        raise ValueError(f"dimension mismatch: matrix {m.shape}, vector {x.shape}")
    return m.T @ x if transposed else m @ x


def triple_product(P, M, Q) -> np.ndarray:
    """Dense P^T M Q for tall-skinny P and Q."""
    if P.shape[0] != M.shape[0] or M.shape[1] != Q.shape[0]:
        raise ValueError(f"dimension mismatch: {P.shape}, {M.shape}, {Q.shape}")
    MQ = M @ Q
    out = P.T @ MQ
    return out.toarray() if sp.issparse(out) else np.asarray(out)


class Factorization:
    """LU factors of a square sparse matrix; solves with A or A^T.

    The underlying SuperLU object is read-only after construction, but
    concurrent solves should use one factorization per worker.
    """

    def __init__(self, m: sp.csr_matrix, ordering: np.ndarray | None = None):
        self.matrix = m
        self.shape = m.shape
        self.ordering = ordering
        try:
            if ordering is None:
                self._lu = spla.splu(m.tocsc(), permc_spec="COLAMD")
            else:
                # symmetric permutation; SuperLU keeps the given column order
                self._lu = spla.splu(m[ordering][:, ordering].tocsc(), permc_spec="NATURAL")
        except RuntimeError as exc:
            raise SingularMatrixError(f"factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray, transposed: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise ValueError(f"dimension mismatch: matrix {self.shape}, rhs {rhs.shape}")
        trans = "T" if transposed else "N"
        if self.ordering is None:
            x = self._lu.solve(rhs, trans=trans)
        else:
            x = np.empty_like(rhs)
            x[self.ordering] = self._lu.solve(rhs[self.ordering], trans=trans)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("solve produced non-finite values")
        if DEBUG_RESIDUAL_TOL is not None:
            r = matvec(self.matrix, x, transposed) - rhs
            scale = max(np.linalg.norm(rhs), 1e-300)
            if np.linalg.norm(r) / scale > DEBUG_RESIDUAL_TOL:
                raise SingularMatrixError(
                    f"relative residual {np.linalg.norm(r) / scale:.2e} too large")
        return x


def nested_dissection(points: np.ndarray, leaf: int = 100) -> np.ndarray:
    """Geometric nested-dissection ordering for unknowns sitting on grid points.

    Splits along the longer extent at the median coordinate line; unknowns
    on the line form the separator and are numbered after both halves.
    Only valid when unknowns couple to points at most one grid line away,
    which holds for P1 stencils on the structured meshes used here.
    """
    points = np.asarray(points, dtype=float)
    out = []
    stack = [(np.arange(len(points)), False)]
    while stack:
        idx, emit = stack.pop()
        if emit or len(idx) <= leaf:
            out.append(idx)
            continue
        P = points[idx]
        ax = int(np.argmax(P.max(axis=0) - P.min(axis=0)))
        vals = np.unique(P[:, ax])
        if len(vals) < 3:
            out.append(idx)
            continue
        s = vals[len(vals) // 2]
        # popped in reverse: left, right, separator
        stack.append((idx[P[:, ax] == s], True))
        stack.append((idx[P[:, ax] > s], False))
        stack.append((idx[P[:, ax] < s], False))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def factorize(m, ordering: np.ndarray | None = None) -> Factorization:
    """LU factors; ``ordering`` is an optional symmetric fill-reducing permutation."""
    m = canonical(m)
    rows, cols = m.shape
    if rows != cols:
        raise ValueError(f"cannot factorize non-square matrix {m.shape}")
    nnz_rows = np.diff(m.indptr)
    if np.any(nnz_rows == 0):
        raise SingularMatrixError("structurally singular: empty row",
                                  int(np.flatnonzero(nnz_rows == 0)[0]))
    nnz_cols = np.bincount(m.indices, minlength=cols)
    if np.any(nnz_cols == 0):
        raise SingularMatrixError("structurally singular: empty column",
                                  int(np.flatnonzero(nnz_cols == 0)[0]))
    if ordering is not None:
        ordering = np.asarray(ordering)
        if not np.array_equal(np.sort(ordering), np.arange(rows)):
            raise ValueError("ordering is not a permutation")
    return Factorization(m, ordering)


def solve(f: Factorization, rhs: np.ndarray, transposed: bool = False) -> np.ndarray:
    return f.solve(rhs, transposed)


def dense_solve(K: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for the small coarse system."""
    try:
        with warnings.catch_warnings():
            # singularity is reported below with the pivot index
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(K, check_finite=True)
    except ValueError as exc:
        raise SingularMatrixError(str(exc)) from exc
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise SingularMatrixError("coarse matrix is numerically singular",
                                  int(np.argmin(d)))
    return scipy.linalg.lu_solve((lu, piv), g)


def dump(m) -> str:
    """Matrix-market-style text: header, size line, 1-based triplets."""
    c = sp.coo_matrix(canonical(m))
    lines = ["%%MatrixMarket matrix coordinate real general",
             f"{c.shape[0]} {c.shape[1]} {c.nnz}"]
    lines += [f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(c.row, c.col, c.data)]
    return "\n".join(lines) + "\n"
