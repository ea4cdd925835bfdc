"""Pole expansion of the spectral projector and the projection preconditioner.

The projector onto the eigenvectors below the gap is approximated by
``sum_j w_j (H - z_j)^{-1}``, a trapezoidal rule for the resolvent contour
integral around the occupied part of the spectrum.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import _kernels
from .dense import SpectralData
from .sparsify import (
    GmresConfig,
    GmresHistory,
    const_resolvent_preconditioner,
    gmres,
    shifted_operator,
    sparsifying_preconditioner,
)

log = logging.getLogger(__name__)


class ContourGeometryError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralWindow:
    lambda1: float
    lambdaN: float
    lambdaN1: float
    lambdan: float

    def __post_init__(self):
        if not (self.lambda1 <= self.lambdaN < self.lambdaN1 <= self.lambdan):
            raise ValueError("window must satisfy l1 <= lN < lN1 <= ln")

    @classmethod
    def from_spectrum(cls, s: SpectralData) -> "SpectralWindow":
        lam = s.eigenvalues
        return cls(float(lam[0]), float(lam[s.N - 1]), float(lam[s.N]), float(lam[-1]))

    @property
    def mu(self) -> float:
        return 0.5 * (self.lambdaN + self.lambdaN1)

    @property
    def gap(self) -> float:
        return self.lambdaN1 - self.lambdaN

    def shifted(self, sigma: float) -> "SpectralWindow":
        return SpectralWindow(
            self.lambda1 - sigma, self.lambdaN - sigma, self.lambdaN1 - sigma, self.lambdan - sigma
        )


@dataclass
class PoleSet:
    nodes: np.ndarray
    weights: np.ndarray
    contour: str
    aspect: float
    center: float
    semi_axes: tuple

    @property
    def p(self) -> int:
        return len(self.nodes)

    def upper(self) -> np.ndarray:
        """Indices of the nodes in the open upper half plane."""
        return np.flatnonzero(self.nodes.imag > 0)

    def evaluate(self, lam) -> np.ndarray:
        """``sum_j w_j / (lam - z_j)`` at real or complex points."""
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        return _kernels.rational_sum(lam, self.nodes, self.weights)


def build_poles(w: SpectralWindow, p: int = 30, contour: str = "ellipse", aspect: float | None = None) -> PoleSet:
    """Trapezoidal nodes and weights on an ellipse around ``[lambda1, lambdaN]``.

    ``contour="ellipse"`` with ``aspect=None`` uses the ellipse with foci at
    ``lambda1`` and ``lambdaN`` whose size balances the quadrature error on the
    occupied interval against the error at ``lambdaN1``.  With an explicit
    ``aspect`` (or ``contour="circle"``, i.e. aspect 1) the ellipse is centred
    on the occupied interval with its right vertex at ``mu`` and semi-minor
    axis ``aspect`` times the semi-major one.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be even and >= 2")
    if w.gap <= 0:
        raise ContourGeometryError("gap must be positive")
    c = 0.5 * (w.lambda1 + w.lambdaN)
    h = 0.5 * (w.lambdaN - w.lambda1)
    if contour == "circle":
        aspect = 1.0
    elif contour != "ellipse":
        raise ValueError(f"unknown contour {contour!r}")

    if aspect is None:
        if h <= 1e-12 * w.gap:
            a = b = 0.25 * w.gap
        else:
            x = (w.lambdaN1 - c) / h
            rho = np.sqrt(x + np.sqrt(x * x - 1.0))
            a = 0.5 * h * (rho + 1.0 / rho)
            b = 0.5 * h * (rho - 1.0 / rho)
        aspect_used = b / a
    else:
        if aspect <= 0:
            raise ValueError("aspect must be positive")
        a = w.mu - c
        b = aspect * a
        aspect_used = float(aspect)

    if c + a >= w.lambdaN1 or c - a >= w.lambda1 or c + a <= w.lambdaN:
        raise ContourGeometryError(
            f"contour [{c - a:.6g}, {c + a:.6g}] does not separate [{w.lambda1:.6g}, {w.lambdaN:.6g}] "
            f"from {w.lambdaN1:.6g}"
        )
    theta = 2 * np.pi * (np.arange(p) + 0.5) / p
    nodes = c + a * np.cos(theta) + 1j * b * np.sin(theta)
    dz = -a * np.sin(theta) + 1j * b * np.cos(theta)
    weights = -dz / (1j * p)
    kind = "circle" if np.isclose(a, b) else "ellipse"
    return PoleSet(nodes, weights, kind, aspect_used, c, (a, b))


def indicator_samples(w: SpectralWindow, samples: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Sample points on both spectral intervals and the target indicator values."""
    occ = np.linspace(w.lambda1, w.lambdaN, samples)
    t = np.linspace(0.0, 1.0, samples)
    # the error decays away from the gap, so cluster samples near lambdaN1
    unocc = w.lambdaN1 + (w.lambdan - w.lambdaN1) * t**3
    x = np.concatenate([occ, unocc])
    chi = np.concatenate([np.ones(samples), np.zeros(samples)])
    return x, chi


def indicator_error(poles: PoleSet, w: SpectralWindow, samples: int = 200) -> float:
    """Max deviation of the rational approximation from the occupation indicator."""
    x, chi = indicator_samples(w, samples)
    return float(np.abs(poles.evaluate(x) - chi).max())


def write_poles_csv(poles: PoleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["re_z", "im_z", "re_w", "im_w"])
        for z, wt in zip(poles.nodes, poles.weights):
            wr.writerow([repr(float(z.real)), repr(float(z.imag)), repr(float(wt.real)), repr(float(wt.imag))])


def read_poles_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    z = np.array([float(r["re_z"]) + 1j * float(r["im_z"]) for r in rows])
    wt = np.array([float(r["re_w"]) + 1j * float(r["im_w"]) for r in rows])
    return z, wt


# -- resolvent solvers ------------------------------------------------------------


class DenseResolventSolver:
    """Exact solves ``(H - z_j) Y = B`` with dense LU factors (oracle mode)."""

    def __init__(self, H_dense: np.ndarray, poles: PoleSet):
        self.H = np.asarray(H_dense)
        self.poles = poles
        self._lu = {}
        self.setup_time = 0.0

    def solve(self, j: int, B: np.ndarray) -> np.ndarray:
        if j not in self._lu:
            t0 = time.perf_counter()
            A = self.H - self.poles.nodes[j] * np.eye(self.H.shape[0])
            self._lu[j] = la.lu_factor(A)
            self.setup_time += time.perf_counter() - t0
        return la.lu_solve(self._lu[j], B)


class GmresResolventSolver:
    """Rough GMRES solves with the right-hand side as the initial guess."""

    def __init__(self, H, poles: PoleSet, cfg: GmresConfig | None = None, q: int = 1):
        self.H = H
        self.poles = poles
        self.cfg = cfg or GmresConfig()
        self.q = q
        self._precond = {}
        self.setup_time = 0.0
        self.histories: dict[int, list[GmresHistory]] = {}

    def preconditioner(self, j: int):
        kind = self.cfg.preconditioning
        if kind == "none":
            return None
        if j not in self._precond:
            t0 = time.perf_counter()
            z = self.poles.nodes[j]
            if kind == "const_resolvent":
                self._precond[j] = const_resolvent_preconditioner(self.H, z)
            else:
                self._precond[j] = sparsifying_preconditioner(self.H, z, self.q)
            self.setup_time += time.perf_counter() - t0
        return self._precond[j]

    def setup(self, indices=None) -> None:
        for j in range(self.poles.p) if indices is None else indices:
            self.preconditioner(j)

    def solve(self, j: int, B: np.ndarray) -> np.ndarray:
        z = self.poles.nodes[j]
        Y, hist = gmres(shifted_operator(self.H, z), self.preconditioner(j), B, x0=B, cfg=self.cfg)
        self.histories.setdefault(j, []).append(hist)
        return Y


def pole_sum(poles: PoleSet, solver, B: np.ndarray, real_operator: bool = True) -> np.ndarray:
    """``sum_j w_j Y_j`` with ``Y_j`` from ``solver.solve(j, B)``.

    For a real operator and real ``B`` the conjugate node pairs contribute
    complex-conjugate terms, so only the upper half plane is solved and the
    result is ``2 Re`` of that partial sum.
    """
    B = np.asarray(B)
    if real_operator and np.isrealobj(B):
        acc = np.zeros(B.shape, dtype=complex)
        for j in poles.upper():
            acc += poles.weights[j] * solver.solve(j, B)
        return 2.0 * acc.real
    acc = np.zeros(B.shape, dtype=complex)
    for j in range(poles.p):
        acc += poles.weights[j] * solver.solve(j, B)
    return acc


@dataclass
class ProjectionPrecond:
    """Approximate spectral projector used as an OMM preconditioner.

    ``mode="on_the_fly"`` applies the pole sum to every block;
    ``mode="precomputed"`` applies ``U U*`` built by :func:`randomized_projection`.
    """

    poles: PoleSet
    solver: object
    mode: str = "on_the_fly"
    U: np.ndarray | None = field(default=None, repr=False)
    real_operator: bool = True

    def __post_init__(self):
        if self.mode not in ("on_the_fly", "precomputed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "precomputed":
            if self.U is None:
                raise ValueError("precomputed mode needs U")
            err = np.abs(self.U.conj().T @ self.U - np.eye(self.U.shape[1])).max()
            if err > 1e-10:
                raise ValueError(f"U is not orthonormal (error {err:.2e})")

    def __call__(self, B: np.ndarray) -> np.ndarray:
        if self.mode == "precomputed":
            out = self.U @ (self.U.conj().T @ B)
            return out.real if np.isrealobj(B) and np.isrealobj(self.U) else out
        return pole_sum(self.poles, self.solver, B, self.real_operator)


def apply_pp(P: ProjectionPrecond, H, B: np.ndarray) -> np.ndarray:
    """On-the-fly projection ``sum_j w_j (H - z_j)^{-1} B`` (rough solves)."""
    if P.mode != "on_the_fly":
        raise ValueError("apply_pp needs an on-the-fly preconditioner")
    return pole_sum(P.poles, P.solver, B, P.real_operator)


def rr_qr(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-pivoted QR: ``Y[:, perm] = Q @ R`` with non-increasing ``|diag(R)|``."""
    Q, R, perm = la.qr(Y, mode="economic", pivoting=True)
    return Q, R, perm


def randomized_projection(
    H,
    poles: PoleSet,
    N: int,
    oversample: int = 0,
    solver=None,
    rng=None,
    real_operator: bool = True,
) -> np.ndarray:
    """Orthonormal ``U`` (``n x N``) spanning the range of the sketched pole sum."""
    n = H.n if hasattr(H, "n") else H.shape[0]
    if N + oversample > n:
        raise ValueError("N + oversample exceeds n")
    rng = np.random.default_rng(rng)
    B = rng.standard_normal((n, N + oversample))
    Y = pole_sum(poles, solver, B, real_operator)
    Q, R, _ = rr_qr(Y)
    d = np.abs(np.diag(R))
    if d[N - 1] < 1e-12 * d[0]:
        raise RankDeficiencyError(
            f"|R_NN| / |R_11| = {d[N - 1] / d[0]:.2e}; increase the oversampling"
        )
    return Q[:, :N]
