"""Hot numeric kernels, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The numba path is
used by default; set ``CGCRW_DISABLE_NUMBA=1`` in the environment (before
import) to force the numpy path. Both implementations stay importable through
:data:`IMPLEMENTATIONS` so tests and ``benchmarks/bench_kernels.py`` can compare
them directly.
"""
from __future__ import annotations

import os

import numpy as np

_ROW_CHUNK = 256
_PAIR_BUDGET = 1 << 22  # candidate pairs per numpy block


def _env_disabled() -> bool:
    return os.environ.get("CGCRW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------------------
# numpy implementations


def _gaussian_affinity_numpy(coords, sigma, out=None):
    n = coords.shape[0]
    if out is None:
        out = np.empty((n, n), dtype=np.float64)
    scale = -1.0 / (2.0 * sigma * sigma)
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        diff = coords[lo:hi, None, :] - coords[None, :, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        np.exp(d2 * scale, out=out[lo:hi])
    return out


def _nearest_center_numpy(points, centers):
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    if centers.shape[0] == 0:
        labels.fill(-1)
        return labels
    for lo in range(0, n, _ROW_CHUNK * 16):
        hi = min(lo + _ROW_CHUNK * 16, n)
        diff = points[lo:hi, None, :] - centers[None, :, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        labels[lo:hi] = np.argmin(d2, axis=1)
    return labels


def _csr_components_numpy(indptr, indices, n):
    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    counts = np.diff(indptr)
    for start in range(n):
        if labels[start] >= 0:
            continue
        labels[start] = next_label
        frontier = np.array([start], dtype=np.int64)
        while frontier.size:
            # gather all neighbours of the frontier in one shot
            lens = counts[frontier]
            if lens.sum() == 0:
                break
            offsets = np.repeat(indptr[frontier] - np.cumsum(lens) + lens, lens)
            nbrs = indices[offsets + np.arange(lens.sum())]
            nbrs = np.unique(nbrs)
            nbrs = nbrs[labels[nbrs] < 0]
            labels[nbrs] = next_label
            frontier = nbrs
        next_label += 1
    return labels


def _radius_csr_numpy(coords, radius, scale, weak):
    n = coords.shape[0]
    r2 = radius * radius
    order = np.argsort(coords[:, 0], kind="stable")
    xs = coords[order, 0]
    labeled = weak is not None and bool((weak >= 0).any())
    step = max(16, _PAIR_BUDGET // max(n, 1))

    def blocks():
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            rows = order[lo:hi]
            a = np.searchsorted(xs, xs[lo] - radius, side="left")
            b = np.searchsorted(xs, xs[hi - 1] + radius, side="right")
            cand = order[a:b]
            diff = coords[rows, None, :] - coords[None, cand, :]
            d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
            keep = d2 <= r2
            if labeled:
                wr = weak[rows][:, None]
                wc = weak[cand][None, :]
                keep &= ~((wr >= 0) & (wc >= 0) & (wr != wc))
            yield rows, cand, d2, keep

    counts = np.zeros(n, dtype=np.int64)
    for rows, _, _, keep in blocks():
        counts[rows] = keep.sum(axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(int(indptr[-1]), dtype=np.int32)
    data = np.empty(int(indptr[-1]), dtype=np.float64)
    for rows, cand, d2, keep in blocks():
        ri, ci = np.nonzero(keep)
        row, col = rows[ri], cand[ci]
        s = np.lexsort((col, row))
        row, col, ri, ci = row[s], col[s], ri[s], ci[s]
        rank = np.arange(row.size) - np.searchsorted(row, row, side="left")
        pos = indptr[row] + rank
        indices[pos] = col
        data[pos] = np.exp(d2[ri, ci] * scale)
    return indptr, indices, data


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:
    _jit = nb.njit(cache=False, nogil=True, fastmath=False)

    @_jit
    def _gaussian_affinity_numba_impl(coords, scale, out):
        n = coords.shape[0]
        for i in range(n):
            out[i, i] = 1.0
            xi = coords[i, 0]
            yi = coords[i, 1]
            zi = coords[i, 2]
            for j in range(i + 1, n):
                dx = xi - coords[j, 0]
                dy = yi - coords[j, 1]
                dz = zi - coords[j, 2]
                v = np.exp((dx * dx + dy * dy + dz * dz) * scale)
                out[i, j] = v
                out[j, i] = v
        return out

    def _gaussian_affinity_numba(coords, sigma, out=None):
        n = coords.shape[0]
        if out is None:
            out = np.empty((n, n), dtype=np.float64)
        return _gaussian_affinity_numba_impl(
            np.ascontiguousarray(coords, dtype=np.float64), -1.0 / (2.0 * sigma * sigma), out
        )

    @_jit
    def _nearest_center_numba(points, centers):
        n = points.shape[0]
        k = centers.shape[0]
        labels = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            best = np.inf
            for c in range(k):
                dx = points[i, 0] - centers[c, 0]
                dy = points[i, 1] - centers[c, 1]
                dz = points[i, 2] - centers[c, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
                    labels[i] = c
        return labels

    @_jit
    def _csr_components_numba(indptr, indices, n):
        labels = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        next_label = 0
        for start in range(n):
            if labels[start] >= 0:
                continue
            labels[start] = next_label
            head = 0
            tail = 1
            queue[0] = start
            while head < tail:
                u = queue[head]
                head += 1
                for p in range(indptr[u], indptr[u + 1]):
                    v = indices[p]
                    if labels[v] < 0:
                        labels[v] = next_label
                        queue[tail] = v
                        tail += 1
            next_label += 1
        return labels

    @_jit
    def _radius_rows_numba(coords, order, xs, radius, weak, labeled, indptr, indices, data, scale, fill):
        n = coords.shape[0]
        r2 = radius * radius
        buf_col = np.empty(n, dtype=np.int64)
        buf_val = np.empty(n, dtype=np.float64)
        for p in range(n):
            i = order[p]
            xi = coords[i, 0]
            yi = coords[i, 1]
            zi = coords[i, 2]
            a = np.searchsorted(xs, xi - radius, side="left")
            b = np.searchsorted(xs, xi + radius, side="right")
            wi = weak[i] if labeled else -1
            m = 0
            for q in range(a, b):
                j = order[q]
                if labeled and wi >= 0 and weak[j] >= 0 and weak[j] != wi:
                    continue
                dx = xi - coords[j, 0]
                dy = yi - coords[j, 1]
                dz = zi - coords[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= r2:
                    buf_col[m] = j
                    buf_val[m] = d2
                    m += 1
            if not fill:
                indptr[i + 1] = m
                continue
            srt = np.argsort(buf_col[:m])
            base = indptr[i]
            for t in range(m):
                indices[base + t] = buf_col[srt[t]]
                data[base + t] = np.exp(buf_val[srt[t]] * scale)

    def _radius_csr_numba(coords, radius, scale, weak):
        n = coords.shape[0]
        order = np.argsort(coords[:, 0], kind="stable")
        xs = np.ascontiguousarray(coords[order, 0])
        labeled = weak is not None and bool((weak >= 0).any())
        w = np.ascontiguousarray(weak, dtype=np.int64) if weak is not None else np.full(n, -1, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        empty_i = np.empty(0, dtype=np.int32)
        empty_d = np.empty(0, dtype=np.float64)
        _radius_rows_numba(coords, order, xs, radius, w, labeled, indptr, empty_i, empty_d, scale, False)
        np.cumsum(indptr, out=indptr)
        indices = np.empty(int(indptr[-1]), dtype=np.int32)
        data = np.empty(int(indptr[-1]), dtype=np.float64)
        _radius_rows_numba(coords, order, xs, radius, w, labeled, indptr, indices, data, scale, True)
        return indptr, indices, data


IMPLEMENTATIONS = {
    "numpy": {
        "gaussian_affinity": _gaussian_affinity_numpy,
        "nearest_center": _nearest_center_numpy,
        "csr_components": _csr_components_numpy,
        "radius_csr": _radius_csr_numpy,
    }
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "gaussian_affinity": _gaussian_affinity_numba,
        "nearest_center": _nearest_center_numba,
        "csr_components": _csr_components_numba,
        "radius_csr": _radius_csr_numba,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = IMPLEMENTATIONS[BACKEND]


def gaussian_affinity(coords: np.ndarray, sigma: float, out: np.ndarray | None = None) -> np.ndarray:
    """Dense ``exp(-|c_i - c_j|^2 / (2 sigma^2))`` over all pairs of rows of ``coords``."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    return _active["gaussian_affinity"](coords, float(sigma), out)


def nearest_center(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest row of ``centers`` for each point; ties go to the lowest index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return _active["nearest_center"](points, centers)


def csr_components(indptr: np.ndarray, indices: np.ndarray, n: int) -> np.ndarray:
    """Breadth-first connected components of a symmetric CSR adjacency.

    Components are numbered in order of their lowest member index.
    """
    return _active["csr_components"](
        np.ascontiguousarray(indptr, dtype=np.int64), np.ascontiguousarray(indices, dtype=np.int64), int(n)
    )


def radius_csr(coords: np.ndarray, radius: float, sigma: float, weak_ids: np.ndarray | None = None):
    """Gaussian weights of all pairs within ``radius`` as CSR ``(indptr, indices, data)``.

    Rows have sorted column indices and include the diagonal. Pairs whose nodes
    carry different non-negative ``weak_ids`` are left out. Columns are int32 to
    halve the footprint of large groups.
    """
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    if coords.shape[0] >= 2**31:
        raise ValueError("too many nodes for int32 column indices")
    weak = None if weak_ids is None else np.ascontiguousarray(weak_ids, dtype=np.int64)
    return _active["radius_csr"](coords, float(radius), -1.0 / (2.0 * sigma * sigma), weak)
