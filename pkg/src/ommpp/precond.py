"""Kinetic-energy preconditioners that are diagonal in k-space.

All of them are low-pass filters ``g(|k|^2 / tau)`` applied through the FFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SpectralGrid, apply_symbol

KINDS = ("shifted_laplacian", "tpa", "gtpa")


def compute_tau(X0_hat: np.ndarray, k_squared: np.ndarray) -> float:
    """Kinetic scale ``max_j sum_k |k|^2 |x_j(k)|^2 / 2``.

    ``X0_hat`` holds the columns in k-space (rows in the same order as the
    flattened ``k_squared``); ``|k|^2`` uses integer frequencies.
    """
    X0_hat = np.atleast_2d(np.asarray(X0_hat).T).T
    if not np.any(X0_hat):
        raise ValueError("cannot compute tau from a zero block")
    sums = 0.5 * (k_squared.reshape(-1, 1) * np.abs(X0_hat) ** 2).sum(axis=0)
    return float(sums.max())


def gtpa_coefficients(t: int) -> np.ndarray:
    """``c_0..c_{t+1}`` with ``c_k = (2/3)^k`` and ``c_{t+1} = 2 c_t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    c = (2.0 / 3.0) ** np.arange(t + 2)
    c[t + 1] = 2.0 * c[t]
    return c


def gtpa_symbol(t: int, s, coefficients: np.ndarray | None = None):
    s = np.asarray(s, dtype=float)
    c = gtpa_coefficients(t) if coefficients is None else np.asarray(coefficients, dtype=float)
    p = np.polynomial.polynomial.polyval(s, c[: t + 1])
    return p / (p + c[t + 1] * s ** (t + 1))


def tpa_symbol(s):
    s = np.asarray(s, dtype=float)
    num = 27 + 18 * s + 12 * s**2 + 8 * s**3
    return num / (num + 16 * s**4)


def laplacian_symbol(s):
    return 1.0 / (1.0 + np.asarray(s, dtype=float))


@dataclass
class KineticFilter:
    grid: SpectralGrid
    kind: str
    tau: float
    t: int = 5
    symbol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        s = self.grid.k_squared / self.tau
        if self.kind == "shifted_laplacian":
            self.symbol = laplacian_symbol(s)
        elif self.kind == "tpa":
            self.symbol = tpa_symbol(s)
        else:
            self.symbol = gtpa_symbol(self.t, s)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return apply_filter(self, X)


def apply_filter(f: KineticFilter, X: np.ndarray) -> np.ndarray:
    return apply_symbol(f.grid, f.symbol, X)
