import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from lookahead_impute.exceptions import NotPDError, NotPSDError, SimplexError, SymmetryError
from lookahead_impute.gaussian import (
    EigenBasis,
    Gaussian,
    check_simplex,
    check_symmetric,
    inv_sqrt_pd,
    kl_divergence,
    matrix_sqrt,
    mixture_moments,
    sym_eig,
    w2_distance,
)


def test_check_symmetric_rejects_and_symmetrizes():
    with pytest.raises(SymmetryError):
        check_symmetric([[1.0, 2.0], [0.0, 1.0]])
    M = np.array([[1.0, 1.0 + 1e-15], [1.0, 2.0]])
    S = check_symmetric(M)
    assert np.array_equal(S, S.T)


def test_check_simplex():
    assert np.allclose(check_simplex([0.25, 0.75]), [0.25, 0.75])
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0]):
        with pytest.raises(SimplexError):
            check_simplex(bad)


def test_sym_eig_sign_convention_and_order(rng):
    M = random_spd(rng, 5)
    w, V = sym_eig(M)
    assert np.all(np.diff(w) >= 0)
    assert np.allclose(V @ np.diag(w) @ V.T, M, atol=1e-12)
    for j in range(5):
        k = np.argmax(np.abs(V[:, j]))
        assert V[k, j] > 0
    # same input, same output (sign fixed deterministically)
    w2, V2 = sym_eig(-(-M))
    assert np.array_equal(V, V2)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_matrix_sqrt_squares_back(seed, n):
    M = random_spd(np.random.default_rng(seed), n)
    R = matrix_sqrt(M)
    assert np.allclose(R @ R, M, atol=1e-10 * max(1, np.abs(M).max()))
    assert np.allclose(R, R.T)
    Ri = inv_sqrt_pd(M)
    assert np.allclose(Ri @ M @ Ri, np.eye(n), atol=1e-8)


def test_matrix_sqrt_clamps_tiny_negative_and_rejects_large():
    M = np.diag([1.0, -1e-12])
    assert np.allclose(matrix_sqrt(M), np.diag([1.0, 0.0]))
    with pytest.raises(NotPSDError):
        matrix_sqrt(np.diag([1.0, -1e-3]))


def test_gaussian_validation_and_roundtrip(rng):
    with pytest.raises(NotPDError):
        Gaussian(np.zeros(2), np.diag([1.0, 0.0]))
    g = Gaussian(rng.standard_normal(3), random_spd(rng, 3))
    assert g.dim == 3
    h = Gaussian.from_dict(g.to_dict())
    assert np.array_equal(g.mean, h.mean) and np.array_equal(g.cov, h.cov)
    with pytest.raises(ValueError):
        g.mean[0] = 1.0


def test_eigenbasis_orthogonality(rng):
    V, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    b = EigenBasis(V, np.ones((2, 3)))
    assert np.allclose(b.covariance(1), np.eye(3))
    with pytest.raises(ValueError):
        EigenBasis(V + 1e-3, np.ones((2, 3)))


def test_kl_univariate_closed_form():
    # KL(N(m1,s1^2) || N(m2,s2^2)) = log(s2/s1) + (s1^2 + (m1-m2)^2)/(2 s2^2) - 1/2
    p, q = Gaussian([0.3], [[0.5]]), Gaussian([-1.0], [[2.0]])
    expect = np.log(np.sqrt(2.0 / 0.5)) + (0.5 + 1.3**2) / 4.0 - 0.5
    assert kl_divergence(p, q) == pytest.approx(expect, rel=1e-12)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-14)


def test_kl_matches_monte_carlo(rng):
    p = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
    q = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
    x = rng.multivariate_normal(p.mean, p.cov, size=400_000)

    def logpdf(g, x):
        d = x - g.mean
        P = np.linalg.inv(g.cov)
        return -0.5 * np.einsum("ij,jk,ik->i", d, P, d) - 0.5 * np.log(np.linalg.det(2 * np.pi * g.cov))

    mc = np.mean(logpdf(p, x) - logpdf(q, x))
    assert kl_divergence(p, q) == pytest.approx(mc, abs=0.02)


def test_w2_commuting_closed_form():
    p, q = Gaussian([0.0, 1.0], np.diag([1.0, 4.0])), Gaussian([1.0, 1.0], np.diag([4.0, 9.0]))
    # |dm|^2 + sum (sqrt(a) - sqrt(b))^2
    assert w2_distance(p, q) == pytest.approx(np.sqrt(1.0 + 1.0 + 1.0), rel=1e-12)


def test_mixture_moments():
    comps = [Gaussian([0.0], [[1.0]]), Gaussian([2.0], [[3.0]])]
    m, S = mixture_moments(comps, [0.25, 0.75])
    assert m[0] == pytest.approx(1.5)
    assert S[0, 0] == pytest.approx(0.25 * 1 + 0.75 * 3 + 0.25 * 1.5**2 + 0.75 * 0.5**2)
