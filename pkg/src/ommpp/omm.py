"""Orbital minimization: energy, gradient, exact line search and preconditioned CG.

``H`` may be a dense matrix or a :class:`~ommpp.grid.HamiltonianOp`; only
``H @ block`` is used.  Preconditioners are callables ``P(block) -> block``
that are linear and fixed for the whole run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dense import SpectralData

log = logging.getLogger(__name__)

Preconditioner = Callable[[np.ndarray], np.ndarray]


def _rtr(A: np.ndarray, B: np.ndarray) -> float:
    """``Re tr(A* B)``."""
    return float(np.vdot(A, B).real)


def _tr(A: np.ndarray) -> float:
    return float(np.trace(A).real)


def energy(H, X: np.ndarray, HX: np.ndarray | None = None) -> float:
    if HX is None:
        HX = H @ X
    S = X.conj().T @ X
    A = X.conj().T @ HX
    N = X.shape[1]
    return 0.5 * _tr((2 * np.eye(N) - S) @ A)


def gradient(H, X: np.ndarray, HX: np.ndarray | None = None) -> np.ndarray:
    """``2 H X - X (X* H X) - H X (X* X)``."""
    if HX is None:
        HX = H @ X
    Xh = X.conj().T
    return 2 * HX - X @ (Xh @ HX) - HX @ (Xh @ X)


def quartic_coefficients(X, D, HX, HD) -> np.ndarray:
    """Coefficients ``c0..c4`` of ``E(X + a D)`` as a polynomial in ``a``."""
    Xh, Dh = X.conj().T, D.conj().T
    S0, A0 = Xh @ X, Xh @ HX
    XD = Xh @ D
    XHD = Xh @ HD
    S1, A1 = XD + XD.conj().T, XHD + XHD.conj().T
    S2, A2 = Dh @ D, Dh @ HD

    def tr(a, b):
        return np.vdot(a.conj().T, b).real  # tr(a b)

    c0 = _tr(A0) - 0.5 * tr(S0, A0)
    c1 = _tr(A1) - 0.5 * (tr(S0, A1) + tr(S1, A0))
    c2 = _tr(A2) - 0.5 * (tr(S0, A2) + tr(S1, A1) + tr(S2, A0))
    c3 = -0.5 * (tr(S1, A2) + tr(S2, A1))
    c4 = -0.5 * tr(S2, A2)
    return np.array([c0, c1, c2, c3, c4])


@dataclass
class LineSearchResult:
    alpha: float
    energy: float
    stagnated: bool = False
    HD: np.ndarray | None = field(default=None, repr=False)


def line_search_quartic(H, X, D, HX=None, HD=None) -> LineSearchResult:
    """Exact minimization of the quartic ``E(X + a D)`` over real ``a``."""
    if HX is None:
        HX = H @ X
    if HD is None:
        HD = H @ D
    c = quartic_coefficients(X, D, HX, HD)
    e0 = c[0]
    dc = np.array([4 * c[4], 3 * c[3], 2 * c[2], c[1]])
    # drop vanishing leading terms so np.roots sees the true degree
    scale = np.abs(dc).max()
    if scale == 0:
        return LineSearchResult(0.0, e0, True, HD)
    while abs(dc[0]) <= 1e-14 * scale and len(dc) > 1:
        dc = dc[1:]
    roots = np.roots(dc) if len(dc) > 1 else np.array([])
    real = roots[np.abs(roots.imag) <= 1e-8 * np.maximum(1.0, np.abs(roots.real))].real
    if real.size == 0:
        return LineSearchResult(0.0, e0, True, HD)
    vals = np.polyval(c[::-1], real)
    k = int(np.argmin(vals))
    if vals[k] > e0 or real[k] == 0.0:
        return LineSearchResult(0.0, e0, True, HD)
    return LineSearchResult(float(real[k]), float(vals[k]), False, HD)


@dataclass
class OmmConfig:
    tol: float = 1e-13
    max_iter: int = 4000
    beta_rule: str = "polak_ribiere"
    restart_every: int | None = None
    max_restarts: int = 3
    # "absolute": |dE| <= max(tol, roundoff_factor * eps * |E|)
    # "relative": |dE| <= tol * max(1, |E|)
    criterion: str = "absolute"
    roundoff_factor: float = 8.0
    # optional extra requirement |grad|_F <= gtol * |HX|_F before stopping
    gtol: float | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.beta_rule != "polak_ribiere":
            raise ValueError(f"unsupported beta rule {self.beta_rule!r}")
        if self.criterion not in ("absolute", "relative"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.gtol is not None and self.gtol <= 0:
            raise ValueError("gtol must be positive")

    def threshold(self, E: float) -> float:
        if self.criterion == "relative":
            return self.tol * max(1.0, abs(E))
        return max(self.tol, self.roundoff_factor * np.finfo(float).eps * abs(E))


@dataclass
class OmmReport:
    iterations: int
    energy_trace: list
    converged: bool
    final_X: np.ndarray = field(repr=False)
    wall_times: dict = field(default_factory=dict)
    restarts: int = 0
    d: float = float("nan")


def identity_preconditioner(B: np.ndarray) -> np.ndarray:
    return B


def pcg_minimize(H, P: Preconditioner | None, X1: np.ndarray, cfg: OmmConfig | None = None) -> OmmReport:
    """Preconditioned nonlinear CG with Polak-Ribiere directions and exact line search.

    Iterations count line searches.  Converged when the energy change falls
    below ``cfg.threshold(E)`` (and, with ``cfg.gtol`` set, the gradient is
    small relative to ``HX``).  Two consecutive energy increases restart the
    recursion from the preconditioned gradient; more than ``max_restarts``
    such restarts end the run unconverged.
    """
    cfg = cfg or OmmConfig()
    P = P or identity_preconditioner
    t0 = time.perf_counter()

    X = np.array(X1, copy=True)
    HX = H @ X
    E = energy(H, X, HX)
    trace = [E]
    G_prev = D = None
    restarts = rises = guard_restarts = 0
    converged = energy_small = False
    it = 0

    def small_gradient(grad):
        return cfg.gtol is None or np.linalg.norm(grad) <= cfg.gtol * np.linalg.norm(HX)

    while it < cfg.max_iter:
        grad = gradient(H, X, HX)
        if energy_small and small_gradient(grad):
            converged = True
            break
        G = -P(grad)
        if D is None or (cfg.restart_every and it % cfg.restart_every == 0):
            D = G
        else:
            beta = _rtr(G, G - G_prev) / _rtr(G_prev, G_prev)
            D = G + beta * D
            if _rtr(D, grad) >= 0:  # not a descent direction
                D = G
                restarts += 1
        G_prev = G

        ls = line_search_quartic(H, X, D, HX)
        it += 1
        if ls.stagnated:
            if D is not G:
                # retry from the preconditioned steepest-descent direction
                D = G
                restarts += 1
                ls = line_search_quartic(H, X, D, HX)
            if ls.stagnated:
                trace.append(E)
                converged = small_gradient(grad)
                break

        X = X + ls.alpha * D
        HX = H @ X
        E_new = energy(H, X, HX)
        trace.append(E_new)
        dE = E_new - E
        E = E_new
        energy_small = abs(dE) <= cfg.threshold(E)
        if energy_small and cfg.gtol is None:
            converged = True
            break
        rises = rises + 1 if dE > 0 else 0
        if rises >= 2:
            rises = 0
            D = None
            restarts += 1
            guard_restarts += 1
            if guard_restarts > cfg.max_restarts:
                log.warning("energy keeps increasing after %d restarts; stopping", guard_restarts - 1)
                break

    return OmmReport(
        iterations=it,
        energy_trace=trace,
        converged=converged,
        final_X=X,
        wall_times={"omm": time.perf_counter() - t0},
        restarts=restarts,
    )


def negative_definite_shift(s: SpectralData, margin: float = 1.0) -> float:
    """Diagonal shift ``sigma`` making ``H - sigma I`` negative definite."""
    return float(s.eigenvalues[-1] + margin)
