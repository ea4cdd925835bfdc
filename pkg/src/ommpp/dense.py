"""Dense reference eigensolver, subspace metrics and condition bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .grid import DENSE_CAP


class DegenerateGapError(ValueError):
    pass


class SingularGramError(ValueError):
    pass


class IndefiniteHessianError(ValueError):
    pass


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    X0: np.ndarray
    N: int

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def mu(self) -> float:
        lam = self.eigenvalues
        return 0.5 * (lam[self.N - 1] + lam[self.N])

    @property
    def gap(self) -> float:
        lam = self.eigenvalues
        return lam[self.N] - lam[self.N - 1]

    @property
    def spread(self) -> float:
        return self.eigenvalues[-1] - self.eigenvalues[0]

    @property
    def occupied(self) -> np.ndarray:
        return self.eigenvalues[: self.N]

    def shifted(self, sigma: float) -> "SpectralData":
        """Spectral data of ``H - sigma I`` (same eigenvectors)."""
        return SpectralData(self.eigenvalues - sigma, self.X0, self.N)


def dense_eig(H: np.ndarray, N: int, cap: int = DENSE_CAP, gap_tol: float = 1e-12) -> SpectralData:
    H = np.asarray(H)
    n = H.shape[0]
    if n > cap:
        raise ValueError(f"n = {n} exceeds the dense cap {cap}")
    if not 1 <= N < n:
        raise ValueError(f"need 1 <= N < n, got N={N}, n={n}")
    lam, vecs = la.eigh(H)
    if lam[N] - lam[N - 1] < gap_tol:
        raise DegenerateGapError(
            f"gap lambda_{N + 1} - lambda_{N} = {lam[N] - lam[N - 1]:.3e} is degenerate"
        )
    return SpectralData(lam, vecs[:, :N].copy(), N)


def resolve_occupation(eigenvalues: np.ndarray, N: int, min_rel_gap: float = 1e-6) -> int:
    """Smallest ``N' >= N`` whose gap exceeds ``min_rel_gap`` times the spread.

    Symmetric lattices give exactly degenerate shells, so the requested count
    may have no gap at all.
    """
    lam = np.asarray(eigenvalues)
    spread = lam[-1] - lam[0]
    gaps = np.diff(lam)
    for m in range(N, len(lam)):
        if gaps[m - 1] >= min_rel_gap * spread:
            return m
    raise DegenerateGapError(f"no gap above {min_rel_gap:g} * spread for N >= {N}")


def projector(X: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``X (X* X)^{-1} X*`` onto the column space of ``X``."""
    S = X.conj().T @ X
    try:
        c = la.cho_factor(S)
    except la.LinAlgError as exc:
        raise SingularGramError("Gram matrix X*X is singular") from exc
    if np.linalg.cond(S) > 1e14:
        raise SingularGramError(f"Gram matrix X*X is singular (cond {np.linalg.cond(S):.2e})")
    return X @ la.cho_solve(c, X.conj().T)


def subspace_distance(X: np.ndarray, X0: np.ndarray) -> float:
    """Entrywise max-norm distance of the projectors, relative to that of ``X0``."""
    P0 = projector(X0)
    P = projector(X)
    return float(np.abs(P - P0).max() / np.abs(P0).max())


def omm_condition_bound(s: SpectralData) -> float:
    return float(s.spread / s.gap)


def shifted_inverse_condition_bound(s: SpectralData, mu_shift: float) -> float:
    """Lower bound on cond of the Hessian preconditioned by ``(H - mu)^{-1}``."""
    lam = s.eigenvalues
    l1, lN, lN1, ln = lam[0], lam[s.N - 1], lam[s.N], lam[-1]
    if mu_shift >= lN1:
        raise IndefiniteHessianError(f"shift {mu_shift} >= lambda_(N+1) = {lN1}")

    def ratio(li, lj):
        return 1.0 - (li - mu_shift) / (lj - mu_shift)

    if mu_shift > lN:
        return float(ratio(l1, lN1) / ratio(lN, ln))
    if mu_shift > l1:
        return float(ratio(l1, lN1) / ratio(lN, lN1))
    return float(ratio(l1, ln) / ratio(lN, lN1))


def hessian_apply(H, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Hessian of the OMM energy at ``X`` applied to ``Z``.

    ``H`` is anything supporting ``H @ block`` (a dense matrix or a
    :class:`~ommpp.grid.HamiltonianOp`).
    """
    HX = H @ X
    HZ = H @ Z
    Xh = X.conj().T
    Zh = Z.conj().T
    return (
        2 * HZ
        - Z @ (Xh @ HX)
        - X @ (Zh @ HX)
        - X @ (Xh @ HZ)
        - HZ @ (Xh @ X)
        - HX @ (Zh @ X)
        - HX @ (Xh @ Z)
    )
