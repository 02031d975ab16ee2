"""Dense/sparse kernels used by the GNN forward and backward passes.

Dense matrices are plain 2-D ``float64`` numpy arrays. Sparse matrices use a
small CSR container (:class:`SparseMatrix`) so that edge-level manipulation
(signing, blocking, calibration) stays explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class CapabilityError(RuntimeError):
    """Requested computation exceeds what this kernel supports at desk scale."""


DENSE_EIG_LIMIT = 2048


@dataclass(frozen=True)
class SparseMatrix:
    """CSR matrix. Column indices are strictly increasing within each row."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        if row_ptr.shape != (self.rows + 1,):
            raise ShapeError(f"row_ptr must have length {self.rows + 1}")
        if row_ptr[0] != 0 or row_ptr[-1] != len(col_idx) or np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing from 0 to nnz")
        if len(values) != len(col_idx):
            raise ShapeError("values and col_idx differ in length")
        if len(col_idx):
            if col_idx.min() < 0 or col_idx.max() >= self.cols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row
            step = np.diff(col_idx)
            row_start = np.zeros(len(col_idx), dtype=bool)
            row_start[row_ptr[:-1][np.diff(row_ptr) > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite sparse value")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.col_idx)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry (COO expansion of ``row_ptr``)."""
        return np.repeat(np.arange(self.rows), np.diff(self.row_ptr))

    def with_values(self, values: np.ndarray) -> SparseMatrix:
        """Same sparsity pattern, new stored values (zeros are kept stored)."""
        return SparseMatrix(self.rows, self.cols, self.row_ptr, self.col_idx, values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def transpose(self) -> SparseMatrix:
        """Materialized transpose."""
        rows = self.row_indices()
        return from_coo(self.cols, self.rows, self.col_idx, rows, self.values)

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.rows)
        np.add.at(sums, self.row_indices(), self.values)
        return sums

    @classmethod
    def identity(cls, n: int) -> SparseMatrix:
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> SparseMatrix:
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return from_coo(a.shape[0], a.shape[1], r, c, a[r, c])


def from_coo(rows: int, cols: int, r, c, v) -> SparseMatrix:
    """Build CSR from coordinate triplets. Duplicate coordinates are an error."""
    r = np.asarray(r, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    v = np.asarray(v, dtype=np.float64)
    if not (len(r) == len(c) == len(v)):
        raise ShapeError("coordinate arrays differ in length")
    if len(r) and (r.min() < 0 or r.max() >= rows):
        raise ValueError("row index out of range")
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    if len(r) > 1:
        dup = (np.diff(r) == 0) & (np.diff(c) == 0)
        if np.any(dup):
            raise ValueError("duplicate coordinate in sparse construction")
    counts = np.bincount(r, minlength=rows)
    row_ptr = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrix(rows, cols, row_ptr, c, v)


def spmm(a: SparseMatrix, h: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``a @ h``; rows without stored entries give zero rows."""
    h = np.asarray(h, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h[:, None]
    if a.cols != h.shape[0]:
        raise ShapeError(f"spmm: a is {a.shape}, h has {h.shape[0]} rows")
    out = np.zeros((a.rows, h.shape[1]))
    if a.nnz:
        prod = a.values[:, None] * h[a.col_idx]
        counts = np.diff(a.row_ptr)
        nonempty = np.flatnonzero(counts)
        # reduceat over consecutive nonempty row starts sums exactly each row's segment
        out[nonempty] = np.add.reduceat(prod, a.row_ptr[nonempty], axis=0)
    return out[:, 0] if squeeze else out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def row_log_softmax(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ShapeError("row_log_softmax of an empty matrix")
    shifted = h - h.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _mask_indices(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ShapeError("boolean mask must cover every row")
        return np.flatnonzero(mask)
    return np.unique(mask.astype(np.int64))


def nll_loss_and_grad(logp: np.ndarray, labels, mask) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over ``mask`` and its gradient w.r.t. the logits.

    ``logp`` must be the row log-softmax of the logits; the returned gradient is
    ``(softmax - onehot) / |mask|`` on masked rows and zero elsewhere. ``mask`` is
    a boolean vector or an index collection (treated as a set).
    """
    labels = np.asarray(labels, dtype=np.int64)
    idx = _mask_indices(mask, logp.shape[0])
    if len(idx) == 0:
        raise ValueError("nll_loss_and_grad: empty mask")
    y = labels[idx]
    if y.min() < 0 or y.max() >= logp.shape[1]:
        raise ValueError("label out of range")
    m = len(idx)
    loss = -float(logp[idx, y].sum()) / m
    grad = np.zeros_like(logp)
    grad[idx] = np.exp(logp[idx])
    grad[idx, y] -= 1.0
    grad[idx] /= m
    return loss, grad


class SpectralEstimate(NamedTuple):
    radius: float
    converged: bool
    iterations: int


def spectral_radius(a: SparseMatrix, tol: float = 1e-10, max_iter: int = 10_000,
                    seed: int = 0) -> SpectralEstimate:
    """Largest eigenvalue magnitude by power iteration.

    Iterates on ``a @ a`` (estimate ``sqrt(||a a v||)``) so that real dominant
    pairs ``+-rho`` do not make the estimate oscillate. Starts from the
    normalized all-ones vector; if the iterate collapses to zero it restarts
    from a seeded random vector.
    """
    if a.rows != a.cols:
        raise ShapeError("spectral_radius needs a square matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if a.nnz == 0 or not np.any(a.values):
        return SpectralEstimate(0.0, True, 0)
    n = a.rows
    rng = np.random.default_rng(seed)
    v = np.ones(n) / np.sqrt(n)
    prev = np.inf
    restarts = 0
    est = 0.0
    for it in range(1, max_iter + 1):
        w = spmm(a, spmm(a, v))
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            if restarts >= 3:
                return SpectralEstimate(0.0, True, it)
            restarts += 1
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            prev = np.inf
            continue
        est = np.sqrt(norm)
        v = w / norm
        if abs(est - prev) < tol:
            return SpectralEstimate(est, True, it)
        prev = est
    return SpectralEstimate(est, False, max_iter)


def connected_components(a: SparseMatrix) -> np.ndarray:
    """Component label per node of the undirected support graph of ``a``."""
    n = a.rows
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    rows = a.row_indices()
    for i, j in zip(rows[a.values != 0], a.col_idx[a.values != 0]):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def unit_circle_count(a: SparseMatrix, eps: float = 1e-8, mode: str = "dense") -> int:
    """Number of eigenvalues with ``|lambda| >= 1 - eps``.

    ``mode="dense"`` uses a full eigen-decomposition (n <= 2048).
    ``mode="components"`` counts connected components whose rows are all
    nonnegative and stochastic; this equals the dense count for block-diagonal
    stochastic inputs whose blocks are irreducible and aperiodic.
    """
    if a.rows != a.cols:
        raise ShapeError("unit_circle_count needs a square matrix")
    if mode == "components":
        labels = connected_components(a)
        sums = a.row_sums()
        neg = np.zeros(a.rows, dtype=bool)
        neg[a.row_indices()[a.values < 0]] = True
        ok = (np.abs(sums - 1.0) <= eps) & ~neg
        return int(sum(np.all(ok[labels == k]) for k in range(labels.max() + 1)))
    if mode != "dense":
        raise ValueError(f"unknown mode {mode!r}")
    if a.rows > DENSE_EIG_LIMIT:
        raise CapabilityError(
            f"n={a.rows} exceeds the dense eigen limit {DENSE_EIG_LIMIT}; "
            "use mode='components'")
    eig = np.linalg.eigvals(a.to_dense())
    return int(np.sum(np.abs(eig) >= 1.0 - eps))
