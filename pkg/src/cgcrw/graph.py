"""Affinity and transition matrices over one semantic group.

Dense matrices are plain ``ndarray``; sparse ones are ``scipy.sparse.csr_array``.
Both are wrapped so callers only see ``matvec`` / ``backend``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _accel
from .core import CgcrwParams

DENSE = "dense"
SPARSE = "sparse"


@dataclass
class AffinityMatrix:
    data: np.ndarray | sp.csr_array

    @property
    def backend(self) -> str:
        return SPARSE if sp.issparse(self.data) else DENSE

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.data.nnz) if sp.issparse(self.data) else int(np.count_nonzero(self.data))

    def toarray(self) -> np.ndarray:
        return self.data.toarray() if sp.issparse(self.data) else np.asarray(self.data)


class TransitionMatrix(AffinityMatrix):
    """Row-stochastic walk matrix; ``matvec`` maps score rows ``B`` (k x n) to ``(A @ B.T).T``."""

    def matvec(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            return self.data @ b
        return np.ascontiguousarray((self.data @ b.T).T)


def cutoff_radius(sigma: float, kernel_cutoff: float) -> float:
    """Distance beyond which the Gaussian kernel drops below ``kernel_cutoff``."""
    if kernel_cutoff <= 0.0:
        return np.inf
    return sigma * np.sqrt(-2.0 * np.log(kernel_cutoff))


def build_affinity(
    coords: np.ndarray,
    offsets: np.ndarray | None,
    sigma: float,
    backend: str = DENSE,
    kernel_cutoff: float = 0.0,
) -> AffinityMatrix:
    """Gaussian affinity on shifted coordinates ``coords + offsets``.

    The sparse backend stores only entries ``>= kernel_cutoff``; with a cutoff of
    zero it stores every pair.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if coords.shape[0] < 1:
        raise ValueError("affinity needs at least one node")
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = coords if offsets is None else coords + np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(x).all():
        raise ValueError("non-finite coordinate in affinity input")

    if backend == DENSE:
        return AffinityMatrix(_accel.gaussian_affinity(x, sigma))
    if backend != SPARSE:
        raise ValueError(f"unknown backend {backend!r}")

    radius = cutoff_radius(sigma, kernel_cutoff)
    if not np.isfinite(radius):
        return AffinityMatrix(sp.csr_array(_accel.gaussian_affinity(x, sigma)))
    return AffinityMatrix(_csr(_accel.radius_csr(x, radius, sigma), x.shape[0]))


def _csr(parts, n: int) -> sp.csr_array:
    indptr, indices, data = parts
    if indptr[-1] < np.iinfo(np.int32).max:
        indptr = indptr.astype(np.int32)
    return sp.csr_array((data, indices, indptr), shape=(n, n), copy=False)


def mask_cross_label_edges(w: AffinityMatrix, weak_ids: np.ndarray, copy: bool = True) -> AffinityMatrix:
    """Zero the weight between two nodes carrying different weak instance ids.

    Edges touching an unlabeled node (id ``-1``) are kept.
    """
    weak_ids = np.asarray(weak_ids, dtype=np.int64)
    if weak_ids.shape[0] != w.n:
        raise ValueError("weak_ids length does not match matrix size")
    labeled = np.flatnonzero(weak_ids >= 0)
    data = w.data.copy() if copy else w.data
    if labeled.size == 0:
        return AffinityMatrix(data)
    if sp.issparse(data):
        coo = data.tocoo()
        li, lj = weak_ids[coo.row], weak_ids[coo.col]
        drop = (li >= 0) & (lj >= 0) & (li != lj)
        if drop.any():
            keep = ~drop
            data = sp.csr_array((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=data.shape)
            data.sort_indices()
        return AffinityMatrix(data)
    ids = weak_ids[labeled]
    block = ids[:, None] != ids[None, :]
    sub = data[np.ix_(labeled, labeled)]
    sub[block] = 0.0
    data[np.ix_(labeled, labeled)] = sub
    return AffinityMatrix(data)


def row_normalize(m: AffinityMatrix, copy: bool = True) -> TransitionMatrix:
    """Divide each row by its sum. An all-zero row becomes a self-transition."""
    data = m.data.copy() if copy else m.data
    if sp.issparse(data):
        data = sp.csr_array(data)
        sums = np.asarray(data.sum(axis=1)).reshape(-1)
        zero = np.flatnonzero(sums <= 0)
        if zero.size:
            data = (data + sp.csr_array((np.ones(zero.size), (zero, zero)), shape=data.shape)).tocsr()
            sums[zero] = 1.0
        counts = np.diff(data.indptr)
        data.data = data.data / np.repeat(sums, counts)
        return TransitionMatrix(data)
    sums = data.sum(axis=1)
    zero = np.flatnonzero(sums <= 0)
    if zero.size:
        data[zero, zero] = 1.0
        sums[zero] = 1.0
    data /= sums[:, None]
    return TransitionMatrix(data)


def choose_backend(n: int, params: CgcrwParams) -> str:
    if n < 1:
        raise ValueError("n must be >= 1")
    return DENSE if n <= params.dense_limit else SPARSE


def build_transition(
    coords: np.ndarray,
    offsets: np.ndarray | None,
    weak_ids: np.ndarray,
    params: CgcrwParams,
    backend: str | None = None,
) -> TransitionMatrix:
    """Affinity, cross-label masking and normalization in one pass, reusing buffers."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = coords.shape[0]
    backend = backend or choose_backend(n, params)
    radius = cutoff_radius(params.sigma, params.kernel_cutoff)
    if backend == SPARSE and np.isfinite(radius):
        # masked kernel straight into CSR, then normalized in place: no dense or COO copies
        x = coords if offsets is None else coords + np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(x).all():
            raise ValueError("non-finite coordinate in affinity input")
        m = _csr(_accel.radius_csr(x, radius, params.sigma, weak_ids), n)
        sums = np.add.reduceat(m.data, m.indptr[:-1]) if m.nnz else np.zeros(n)
        for lo in range(0, n, 4096):
            hi = min(lo + 4096, n)
            a, b = m.indptr[lo], m.indptr[hi]
            m.data[a:b] /= np.repeat(sums[lo:hi], np.diff(m.indptr[lo : hi + 1]))
        return TransitionMatrix(m)
    cutoff = params.kernel_cutoff if backend == SPARSE else 0.0
    w = build_affinity(coords, offsets, params.sigma, backend=backend, kernel_cutoff=cutoff)
    w = mask_cross_label_edges(w, weak_ids, copy=False)
    return row_normalize(w, copy=False)


def dump_coo(m: AffinityMatrix, path) -> None:
    """Debug dump, one ``i j value`` line per stored entry."""
    coo = sp.coo_array(m.data)
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
