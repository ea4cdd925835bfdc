"""Restarted GMRES and the sparsifying preconditioner for ``(H - z) u = b``.

The sparsifying preconditioner rewrites the shifted system with the Green's
function ``G`` of its constant-coefficient part, multiplies by a local stencil
``Q`` chosen so that ``Q G`` is numerically supported on the stencil, and
solves the resulting sparse system ``P u = Q G b`` with a sparse LU.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .grid import HamiltonianOp, NearResonanceError, SpectralGrid, apply_symbol, check_resonance

log = logging.getLogger(__name__)

PRECONDITIONING = ("none", "const_resolvent", "sparsifying")


class GmresBreakdownError(RuntimeError):
    pass


class SparsifyError(RuntimeError):
    pass


@dataclass
class GmresConfig:
    rel_tol: float = 1e-5
    restart: int = 15
    max_restarts: int = 5
    preconditioning: str = "const_resolvent"

    def __post_init__(self):
        if self.preconditioning not in PRECONDITIONING:
            raise ValueError(f"unknown preconditioning {self.preconditioning!r}")
        if self.restart < 1 or self.max_restarts < 1:
            raise ValueError("restart and max_restarts must be >= 1")

    @property
    def max_iter(self) -> int:
        return self.restart * self.max_restarts


@dataclass
class GmresHistory:
    """Relative residuals after every inner iteration (one column per rhs).

    Entries at restart boundaries are true residuals ``|b - A x| / |b|``;
    entries inside a cycle are the Arnoldi estimates, which coincide with the
    true residual in exact arithmetic for right preconditioning.
    """

    residuals: list = field(default_factory=list)
    iterations: np.ndarray | None = None
    converged: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.residuals[-1]

    def __len__(self):
        return len(self.residuals)

    def __getitem__(self, i):
        return self.residuals[i]


def gmres(
    apply_A: Callable[[np.ndarray], np.ndarray],
    M: Callable[[np.ndarray], np.ndarray] | None,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    cfg: GmresConfig | None = None,
) -> tuple[np.ndarray, GmresHistory]:
    """Right-preconditioned restarted GMRES, batched over the columns of ``b``.

    Solves ``A M y = b - A x0`` and returns ``x = x0 + M y``.  ``M`` must be
    linear.  Each column converges independently; the run stops when all
    columns reach ``rel_tol`` or after ``restart * max_restarts`` iterations.
    """
    cfg = cfg or GmresConfig()
    M = M or (lambda v: v)
    vector = np.ndim(b) == 1
    b = np.asarray(b, dtype=complex)
    if vector:
        b = b[:, None]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex).reshape(b.shape)
    n, m = b.shape
    bnorm = np.linalg.norm(b, axis=0)
    zero_rhs = bnorm == 0
    x[:, zero_rhs] = 0
    safe_bnorm = np.where(zero_rhs, 1.0, bnorm)

    r = b - apply_A(x)
    rel = np.linalg.norm(r, axis=0) / safe_bnorm
    rel[zero_rhs] = 0.0
    if not np.all(np.isfinite(rel)):
        raise GmresBreakdownError("non-finite initial residual")
    hist = GmresHistory([rel.copy()])
    iters = np.zeros(m, dtype=int)
    k_total = 0
    tol = cfg.rel_tol
    restart = cfg.restart

    for _cycle in range(cfg.max_restarts):
        active = rel > tol
        if not active.any():
            break
        beta = np.linalg.norm(r, axis=0)
        V = np.zeros((restart + 1, n, m), dtype=complex)
        V[0] = np.where(active, r / np.where(beta == 0, 1.0, beta), 0)
        Hs = np.zeros((restart + 1, restart, m), dtype=complex)
        cs = np.zeros((restart, m))
        sn = np.zeros((restart, m), dtype=complex)
        g = np.zeros((restart + 1, m), dtype=complex)
        g[0] = np.where(active, beta, 0)
        kcol = np.zeros(m, dtype=int)
        done = ~active
        est = rel.copy()

        for j in range(restart):
            # copy: apply_A or M may hand back their argument
            w = np.array(apply_A(M(V[j])), dtype=complex)
            for i in range(j + 1):
                h = np.einsum("nm,nm->m", V[i].conj(), w)
                w -= V[i] * h
                Hs[i, j] = h
            hn = np.linalg.norm(w, axis=0)
            if not np.all(np.isfinite(hn)):
                raise GmresBreakdownError("non-finite vector in the Krylov basis")
            Hs[j + 1, j] = hn
            happy = hn <= 1e-14 * np.maximum(np.abs(Hs[: j + 1, j]).max(axis=0), 1e-300)
            V[j + 1] = np.where(happy, 0, w / np.where(happy, 1.0, hn))

            for i in range(j):
                tmp = cs[i] * Hs[i, j] + sn[i] * Hs[i + 1, j]
                Hs[i + 1, j] = -sn[i].conj() * Hs[i, j] + cs[i] * Hs[i + 1, j]
                Hs[i, j] = tmp
            a, bb = Hs[j, j], Hs[j + 1, j]
            rr = np.sqrt(np.abs(a) ** 2 + np.abs(bb) ** 2)
            rr_safe = np.where(rr == 0, 1.0, rr)
            absa = np.abs(a)
            phase = np.where(absa == 0, 1.0, a / np.where(absa == 0, 1.0, absa))
            cs[j] = np.where(absa == 0, 0.0, absa / rr_safe)
            sn[j] = np.where(absa == 0, 1.0, phase * bb.conj() / rr_safe)
            Hs[j, j] = cs[j] * a + sn[j] * bb
            Hs[j + 1, j] = 0
            g[j + 1] = -sn[j].conj() * g[j]
            g[j] = cs[j] * g[j]

            running = ~done
            iters[running] += 1
            kcol[running] = j + 1
            est = np.where(running, np.abs(g[j + 1]) / safe_bnorm, est)
            hist.residuals.append(est.copy())
            k_total += 1
            done |= running & ((est <= tol) | happy)
            if done.all():
                break

        Y = np.zeros((restart, m), dtype=complex)
        for c in np.flatnonzero(kcol):
            k = kcol[c]
            Y[:k, c] = la.solve_triangular(Hs[:k, :k, c], g[:k, c])
        kmax = int(kcol.max())
        if kmax:
            x = x + M(np.einsum("inm,im->nm", V[:kmax], Y[:kmax]))
        r = b - apply_A(x)
        rel = np.linalg.norm(r, axis=0) / safe_bnorm
        rel[zero_rhs] = 0.0
        if not np.all(np.isfinite(rel)):
            raise GmresBreakdownError("non-finite residual")
        hist.residuals[-1] = np.where(active, rel, hist.residuals[-1])

    hist.iterations = iters
    hist.converged = rel <= tol
    if vector:
        hist.residuals = [float(v[0]) for v in hist.residuals]
        hist.iterations = int(iters[0])
        hist.converged = bool(hist.converged[0])
        return x[:, 0], hist
    return x, hist


# -- sparsifying preconditioner ------------------------------------------------


def green_kernel(grid: SpectralGrid, l: complex, z: complex) -> np.ndarray:
    """``g`` with ``G(i, j) = g[i - j]`` for ``G = (-1/2 Laplacian + l - z)^{-1}``, as ``(side, side)``."""
    symbol = grid.kinetic_symbol + (l - z)
    check_resonance(symbol)
    return np.fft.ifft2(1.0 / symbol)


def stencil_offsets(q: int) -> np.ndarray:
    """``((2q+1)^2, 2)`` offsets in stencil order (row-major over ``[-q, q]^2``)."""
    d = np.arange(-q, q + 1)
    a, b = np.meshgrid(d, d, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


def neighborhood(grid: SpectralGrid, q: int, center: int = 0) -> np.ndarray:
    s = grid.side
    c1, c2 = divmod(center, s)
    off = stencil_offsets(q)
    return ((c1 + off[:, 0]) % s) * s + (c2 + off[:, 1]) % s


def green_block(grid: SpectralGrid, g: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Dense submatrix ``G(rows, cols)`` from the translation kernel."""
    s = grid.side
    r1, r2 = np.divmod(rows, s)
    c1, c2 = np.divmod(cols, s)
    return g[(r1[:, None] - c1[None, :]) % s, (r2[:, None] - c2[None, :]) % s]


def stencil_row(grid: SpectralGrid, g: np.ndarray, q: int, center: int = 0):
    """Unit ``q``-stencil minimising ``|q^T G(a, a^c)|`` at ``center``.

    Returns ``(q_stencil, c_stencil, eps)`` with flat stencils of length
    ``(2q+1)^2``.
    """
    a = neighborhood(grid, q, center)
    if len(np.unique(a)) != len(a):
        raise ValueError(f"stencil half-width {q} too wide for side {grid.side}")
    mask = np.ones(grid.n, dtype=bool)
    mask[a] = False
    far = green_block(grid, g, a, np.flatnonzero(mask))
    _, svals, vh = np.linalg.svd(far.T, full_matrices=False)
    qvec = vh[-1].conj()
    eps = float(svals[-1])
    cvec = qvec @ green_block(grid, g, a, a)
    return qvec, cvec, eps


@dataclass
class SparsifiedSystem:
    grid: SpectralGrid
    z: complex
    l: complex
    q: int
    q_stencil: np.ndarray
    c_stencil: np.ndarray
    P: sp.csc_matrix = field(repr=False)
    lu: object = field(repr=False)
    sparsification_residual: float
    diag: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return 2 * self.q + 1

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return precond_apply(self, b)


def build_sparsified(
    grid: SpectralGrid,
    V: np.ndarray,
    z: complex,
    q: int = 1,
    resonance_shift: float | None = None,
) -> SparsifiedSystem:
    """Sparsifying preconditioner for ``(-1/2 Laplacian + diag(V) - z) u = b``.

    ``V`` is the full diagonal (potential minus any constant shift).
    """
    V = np.asarray(V, dtype=float)
    l = complex(V.mean())
    try:
        g = green_kernel(grid, l, z)
    except NearResonanceError:
        if resonance_shift is None:
            resonance_shift = 1e-6 * (grid.kinetic_symbol.max() + np.ptp(V))
        # perturb the constant part; the difference lives in V - l
        l = l + 1j * resonance_shift
        log.info("resolvent near resonance at z=%s; using l=%s", z, l)
        g = green_kernel(grid, l, z)

    qvec, cvec, eps = stencil_row(grid, g, q)
    w = 2 * q + 1
    s = grid.side
    diag = (V - l).reshape(s, s)
    rows, cols, vals = _kernels.stencil_matrix(qvec.reshape(w, w), cvec.reshape(w, w), diag)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(grid.n, grid.n))
    try:
        lu = spla.splu(P, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SparsifyError(f"factorization of P failed at z={z} (eps={eps:.3e}): {exc}") from exc
    return SparsifiedSystem(grid, complex(z), l, q, qvec, cvec, P, lu, eps, diag)


def apply_q(S: SparsifiedSystem, u: np.ndarray) -> np.ndarray:
    s = S.grid.side
    ug = u.reshape((s, s) + u.shape[1:])
    out = _kernels.stencil_apply(ug.astype(complex), S.q_stencil.reshape(S.width, S.width))
    return out.reshape(u.shape)


def precond_apply(S: SparsifiedSystem, b: np.ndarray) -> np.ndarray:
    """``P^{-1} Q G b``."""
    b = np.asarray(b, dtype=complex)
    symbol = S.grid.kinetic_symbol + (S.l - S.z)
    Gb = apply_symbol(S.grid, 1.0 / symbol, b)
    return S.lu.solve(np.ascontiguousarray(apply_q(S, Gb)))


def shifted_operator(H: HamiltonianOp, z: complex) -> Callable[[np.ndarray], np.ndarray]:
    return lambda X: H @ X - z * X


def const_resolvent_preconditioner(H: HamiltonianOp, z: complex) -> Callable[[np.ndarray], np.ndarray]:
    """``(-1/2 Laplacian + <V - shift> - z)^{-1}`` for the system ``(H - z)``."""
    l = complex(np.mean(H.potential) - H.shift)
    symbol = H.grid.kinetic_symbol + (l - z)
    check_resonance(symbol)
    inv = 1.0 / symbol
    return lambda b: apply_symbol(H.grid, inv, np.asarray(b, dtype=complex))


def sparsifying_preconditioner(H: HamiltonianOp, z: complex, q: int = 1) -> SparsifiedSystem:
    return build_sparsified(H.grid, H.potential - H.shift, z, q)
