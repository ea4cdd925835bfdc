"""Loop kernels with a numba path and a pure-numpy fallback.

Set ``OMMPP_NUMBA=0`` to force the numpy implementations (numba is also
skipped automatically when it cannot be imported).  Both variants of every
kernel stay importable as ``<name>_numba`` / ``<name>_numpy`` so the test
suite and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_WANT_NUMBA = os.environ.get("OMMPP_NUMBA", "1").lower() not in ("0", "false", "no", "off")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _WANT_NUMBA


# -- periodic stencil convolution ---------------------------------------------
#   out[i, j, c] = sum_{a, b} w[a, b] * u[(i + a - q) % s, (j + b - q) % s, c]


def stencil_apply_numpy(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    q = w.shape[0] // 2
    out = np.zeros(u.shape, dtype=np.result_type(u, w))
    for a in range(w.shape[0]):
        for b in range(w.shape[1]):
            out += w[a, b] * np.roll(u, shift=(q - a, q - b), axis=(0, 1))
    return out


def _stencil_apply_loops(u, w):
    s1, s2, m = u.shape
    width = w.shape[0]
    q = width // 2
    out = np.zeros((s1, s2, m), dtype=np.complex128)
    for i in range(s1):
        for j in range(s2):
            for a in range(width):
                ii = (i + a - q) % s1
                for b in range(width):
                    jj = (j + b - q) % s2
                    wab = w[a, b]
                    for c in range(m):
                        out[i, j, c] += wab * u[ii, jj, c]
    return out


# -- sparse stencil matrix assembly ---------------------------------------------
#   row (i, j) gets  q[a, b] + c[a, b] * d[(i + a - q) % s, (j + b - q) % s]


def stencil_matrix_numpy(qw, cw, diag):
    s = diag.shape[0]
    width = qw.shape[0]
    h = width // 2
    i, j = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    rows, cols, vals = [], [], []
    for a in range(width):
        for b in range(width):
            ii = (i + a - h) % s
            jj = (j + b - h) % s
            rows.append((i * s + j).ravel())
            cols.append((ii * s + jj).ravel())
            vals.append((qw[a, b] + cw[a, b] * diag[ii, jj]).ravel())
    return (
        np.stack(rows, axis=1).ravel(),
        np.stack(cols, axis=1).ravel(),
        np.stack(vals, axis=1).ravel().astype(complex),
    )


def _stencil_matrix_loops(qw, cw, diag):
    s = diag.shape[0]
    width = qw.shape[0]
    h = width // 2
    nnz = s * s * width * width
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.complex128)
    k = 0
    for i in range(s):
        for j in range(s):
            for a in range(width):
                ii = (i + a - h) % s
                for b in range(width):
                    jj = (j + b - h) % s
                    rows[k] = i * s + j
                    cols[k] = ii * s + jj
                    vals[k] = qw[a, b] + cw[a, b] * diag[ii, jj]
                    k += 1
    return rows, cols, vals


# -- rational sums  r(x) = sum_j w_j / (x - z_j) ----------------------------------


def rational_sum_numpy(x, nodes, weights):
    return (weights[None, :] / (x[:, None] - nodes[None, :])).sum(axis=1)


def _rational_sum_loops(x, nodes, weights):
    out = np.zeros(x.shape[0], dtype=np.complex128)
    for i in range(x.shape[0]):
        acc = 0j
        for j in range(nodes.shape[0]):
            acc += weights[j] / (x[i] - nodes[j])
        out[i] = acc
    return out


if HAS_NUMBA:
    _jit = njit(cache=True, fastmath=False)
    _stencil_apply_jit = _jit(_stencil_apply_loops)
    _stencil_matrix_jit = _jit(_stencil_matrix_loops)
    _rational_sum_jit = _jit(_rational_sum_loops)

    def stencil_apply_numba(u, w):
        return _stencil_apply_jit(
            np.ascontiguousarray(u, dtype=np.complex128), np.ascontiguousarray(w, dtype=np.complex128)
        )

    def stencil_matrix_numba(qw, cw, diag):
        return _stencil_matrix_jit(
            np.ascontiguousarray(qw, dtype=np.complex128),
            np.ascontiguousarray(cw, dtype=np.complex128),
            np.ascontiguousarray(diag, dtype=np.complex128),
        )

    def rational_sum_numba(x, nodes, weights):
        return _rational_sum_jit(
            np.ascontiguousarray(x, dtype=np.complex128),
            np.ascontiguousarray(nodes, dtype=np.complex128),
            np.ascontiguousarray(weights, dtype=np.complex128),
        )


def stencil_apply(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Periodic stencil convolution over the first two axes of ``u``.

    ``u`` is ``(s, s)`` or ``(s, s, m)``; ``w`` is ``(2q+1, 2q+1)``.
    """
    squeeze = u.ndim == 2
    if squeeze:
        u = u[:, :, None]
    out = stencil_apply_numba(u, w) if USE_NUMBA else stencil_apply_numpy(u, w)
    return out[:, :, 0] if squeeze else out


def stencil_matrix(qw: np.ndarray, cw: np.ndarray, diag: np.ndarray):
    """COO triplets of the periodic stencil matrix with entries ``q + c * diag``."""
    if USE_NUMBA:
        return stencil_matrix_numba(qw, cw, diag)
    return stencil_matrix_numpy(qw, cw, diag)


def rational_sum(x: np.ndarray, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if USE_NUMBA:
        return rational_sum_numba(x, nodes, weights)
    return rational_sum_numpy(x, nodes, weights)
