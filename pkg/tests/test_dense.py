import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import problem, random_block
from ommpp.dense import (
    DegenerateGapError,
    IndefiniteHessianError,
    SingularGramError,
    SpectralData,
    dense_eig,
    hessian_apply,
    omm_condition_bound,
    projector,
    resolve_occupation,
    shifted_inverse_condition_bound,
    subspace_distance,
)
from ommpp.grid import HamiltonianOp, build_grid, densify


def test_diag_example():
    s = dense_eig(np.diag([1.0, 2.0, 3.0]), 1)
    assert np.allclose(s.eigenvalues, [1, 2, 3]) and s.mu == 1.5 and s.gap == 1.0


def test_free_spectrum_multiplicities():
    g = build_grid(1)
    s = dense_eig(densify(HamiltonianOp(g, np.zeros(g.n))), 1)
    k2 = np.sort(g.k_squared.ravel())
    assert np.allclose(s.eigenvalues, 2 * np.pi**2 * k2, atol=1e-9)
    assert np.sum(np.isclose(s.eigenvalues, 2 * np.pi**2)) == 4


def test_test1_residual_and_orthonormality():
    p = problem("test1", 3)
    s = p.spectral
    HX = p.H @ s.X0
    assert np.linalg.norm(HX - s.X0 * s.occupied) <= 1e-8 * np.linalg.norm(HX)
    assert np.abs(s.X0.T @ s.X0 - np.eye(s.N)).max() <= 1e-10
    assert s.gap > 0


def test_degenerate_gap_raises():
    with pytest.raises(DegenerateGapError):
        dense_eig(np.diag([1.0, 2.0, 2.0, 3.0]), 2)
    with pytest.raises(ValueError):
        dense_eig(np.eye(3), 3)


def test_resolve_occupation_skips_degenerate_shell():
    lam = np.array([0.0, 1.0, 1.0, 1.0, 2.0, 5.0])
    assert resolve_occupation(lam, 1) == 1
    assert resolve_occupation(lam, 2) == 4
    assert resolve_occupation(lam, 4) == 4
    with pytest.raises(DegenerateGapError):
        resolve_occupation(np.array([0.0, 1.0, 1.0]), 2)


def test_subspace_distance_examples(rng):
    n, N = 10, 3
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    X0 = Q[:, :N]
    assert subspace_distance(X0, X0) == 0.0
    R = rng.standard_normal((N, N)) + 3 * np.eye(N)
    assert subspace_distance(X0 @ R, X0) <= 1e-12
    # complement with N = n/2: oracle from explicit projector arithmetic
    A, B = Q[:, : n // 2], Q[:, n // 2 :]
    PA, PB = A @ A.T, B @ B.T
    expect = np.abs(PB - PA).max() / np.abs(PA).max()
    assert np.isclose(subspace_distance(B, A), expect, rtol=1e-12)


def test_singular_gram(rng):
    x = rng.standard_normal((6, 1))
    with pytest.raises(SingularGramError):
        projector(np.hstack([x, 2 * x]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_projector_idempotent_and_invariant(seed, N):
    r = np.random.default_rng(seed)
    X = random_block(r, 12, N)
    P = projector(X)
    assert np.abs(P @ P - P).max() <= 1e-10
    assert np.abs(P - P.conj().T).max() <= 1e-10
    R = random_block(r, N, N) + 4 * np.eye(N)
    assert np.abs(projector(X @ R) - P).max() <= 1e-9


def test_condition_bound_examples():
    s = SpectralData(np.array([0.0, 1.0, 2.0, 3.0]), np.eye(4)[:, :2], 2)
    assert omm_condition_bound(s) == 3.0
    g = build_grid(1)
    lam = np.sort(2 * np.pi**2 * g.k_squared.ravel())
    # N = 5 fills k = 0 and the |k| = 1 shell; the next shell is |k|^2 = 2
    s = SpectralData(lam, np.eye(g.n)[:, :5], 5)
    assert np.isclose(omm_condition_bound(s), (lam[-1] - 0.0) / (2 * np.pi**2 * (2 - 1)))
    assert np.isclose(omm_condition_bound(s.shifted(-7.0)), omm_condition_bound(s))


def brute_force_bound(lam, N, mu):
    """max/min eigenvalue of (H - mu)^{-1} Hess(X0) over directions orthogonal to X0."""
    n = len(lam)
    H = np.diag(lam)
    X0 = np.eye(n)[:, :N]
    Pinv = np.diag(1.0 / (lam - mu))
    basis = []
    for a in range(N, n):
        for i in range(N):
            Z = np.zeros((n, N))
            Z[a, i] = 1.0
            basis.append(Z)
    M = np.array([[np.sum(Zb * (Pinv @ hessian_apply(H, X0, Za))) for Za in basis] for Zb in basis])
    ev = np.linalg.eigvals(M).real
    return ev.max() / ev.min()


@pytest.mark.parametrize("mu", [-1.0, 0.5, 1.5])
def test_shifted_inverse_bound_against_brute_force(mu):
    lam = np.array([0.0, 1.0, 2.0, 4.0])
    s = SpectralData(lam, np.eye(4)[:, :2], 2)
    assert np.isclose(shifted_inverse_condition_bound(s, mu), brute_force_bound(lam, 2, mu), rtol=1e-10)


def test_shifted_inverse_bound_cases():
    lam = np.array([0.0, 1.0, 2.0, 4.0])
    s = SpectralData(lam, np.eye(4)[:, :2], 2)
    assert np.isclose(shifted_inverse_condition_bound(s, 0.5), 2.0)
    assert np.isclose(shifted_inverse_condition_bound(s, 1.0 + 1e-9), 2.0, rtol=1e-6)
    with pytest.raises(IndefiniteHessianError):
        shifted_inverse_condition_bound(s, 2.0)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=4, max_size=7, unique=True),
    st.integers(1, 3),
    st.floats(0.0, 1.0),
)
def test_shifted_inverse_bound_property(vals, N, frac):
    lam = np.sort(np.array(vals))
    assume(N < len(lam) and np.min(np.diff(lam)) > 1e-2)
    mu = lam[0] - 2.0 + frac * (lam[N] - lam[0] + 1.99)  # anywhere below lambda_{N+1}
    assume(mu < lam[N] - 1e-3 and np.min(np.abs(lam - mu)) > 1e-3)
    s = SpectralData(lam, np.eye(len(lam))[:, :N], N)
    assert np.isclose(shifted_inverse_condition_bound(s, mu), brute_force_bound(lam, N, mu), rtol=1e-8)


def test_hessian_trivial_cases(rng):
    lam = np.array([-5.0, -4.0, -2.0, -1.5, -1.0])
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    H = Q @ np.diag(lam) @ Q.T
    X0 = Q[:, :2]
    Z = rng.standard_normal((5, 2))
    Z -= X0 @ (X0.T @ Z)
    assert np.allclose(hessian_apply(H, X0, Z), H @ Z - Z @ np.diag(lam[:2]), atol=1e-10)
    assert not np.any(hessian_apply(H, X0, np.zeros((5, 2))))


def test_hessian_matches_gradient_differences(rng):
    from ommpp.omm import gradient

    n, N = 12, 3
    A = rng.standard_normal((n, n))
    H = -(A @ A.T) - np.eye(n)
    X, Z = rng.standard_normal((n, N)), rng.standard_normal((n, N))
    errs = []
    for h in (1e-2, 5e-3):
        fd = (gradient(H, X + h * Z) - gradient(H, X - h * Z)) / (2 * h)
        errs.append(np.abs(fd - hessian_apply(H, X, Z)).max())
    assert errs[1] < errs[0] / 3  # O(h^2)
    assert errs[1] <= 1e-3 * np.abs(hessian_apply(H, X, Z)).max()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hessian_symmetric(seed):
    r = np.random.default_rng(seed)
    n, N = 8, 2
    A = random_block(r, n, n)
    H = -(A @ A.conj().T)
    X, Z1, Z2 = (random_block(r, n, N) for _ in range(3))
    a = np.vdot(Z1, hessian_apply(H, X, Z2)).real
    b = np.vdot(Z2, hessian_apply(H, X, Z1)).real
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
