"""Dense symmetric linear algebra and closed-form Gaussian divergences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionError, NotPDError, NotPSDError, SimplexError, SymmetryError

SYMMETRY_RTOL = 1e-12
PSD_SLACK = 1e-10
SIMPLEX_TOL = 1e-10


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def check_symmetric(M: ArrayLike, rtol: float = SYMMETRY_RTOL) -> NDArray:
    """Return ``M`` as a symmetrized float array, or raise :class:`SymmetryError`."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    residual = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    tol = rtol * max(1.0, float(np.max(np.abs(M))) if M.size else 0.0)
    if residual > tol:
        raise SymmetryError(residual, tol)
    return 0.5 * (M + M.T)


def check_simplex(lam: ArrayLike, tol: float = SIMPLEX_TOL) -> NDArray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam < -tol) or abs(lam.sum() - 1.0) > tol:
        raise SimplexError(f"weights {lam} are not on the simplex (tol {tol:g})")
    return lam


def sym_eig(M: ArrayLike, rtol: float = 1e-10) -> tuple[NDArray, NDArray]:
    """Eigendecomposition of a symmetric matrix.

    Eigenvalues are returned in ascending order. Each eigenvector is
    sign-normalized so that its largest-magnitude entry is positive (the
    first such entry on ties), which makes the basis reproducible.
    """
    M = check_symmetric(M, rtol=rtol)
    w, V = np.linalg.eigh(M)
    idx = np.argmax(np.abs(V) - 1e-12 * np.arange(V.shape[0])[:, None], axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs


def matrix_sqrt(M: ArrayLike) -> NDArray:
    """Principal square root of a positive semidefinite matrix.

    Eigenvalues in ``[-1e-10, 0)`` are clamped to zero; anything more
    negative raises :class:`NotPSDError`.
    """
    w, V = sym_eig(M)
    if w.size and w[0] < -PSD_SLACK:
        raise NotPSDError(f"matrix has eigenvalue {w[0]:.3e} < -{PSD_SLACK:g}")
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (R + R.T)


def inv_sqrt_pd(M: ArrayLike) -> NDArray:
    w, V = sym_eig(M)
    if w[0] <= 0:
        raise NotPDError(f"matrix has nonpositive eigenvalue {w[0]:.3e}")
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal ``N(mean, cov)`` with a positive definite covariance.

    The arrays are copied and made read-only on construction.
    """

    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = check_symmetric(np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if cov.shape[0] != mean.size:
            raise DimensionError(
                f"mean has length {mean.size} but covariance is {cov.shape[0]}x{cov.shape[1]}"
            )
        lo = np.linalg.eigvalsh(cov)[0]
        if not lo > 0:
            raise NotPDError(f"covariance is not positive definite (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Gaussian":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["cov"], dtype=float))


@dataclass(frozen=True)
class EigenBasis:
    """Shared orthogonal basis ``V`` plus one positive diagonal per distribution.

    ``diagonals[k]`` holds ``d_k`` so that ``Sigma_k = V diag(d_k) V^T``.
    """

    V: NDArray
    diagonals: NDArray = field(repr=False)

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        D = np.atleast_2d(np.asarray(self.diagonals, dtype=float))
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise DimensionError(f"basis must be square, got {V.shape}")
        if D.shape[1] != V.shape[0]:
            raise DimensionError(f"diagonals have width {D.shape[1]}, basis is {V.shape[0]}")
        err = np.max(np.abs(V.T @ V - np.eye(V.shape[0])))
        if err > 1e-10:
            raise ValueError(f"basis is not orthogonal: ||V^T V - I||_inf = {err:.3e}")
        if np.any(D <= 0):
            raise NotPDError("eigenbasis diagonals must be strictly positive")
        object.__setattr__(self, "V", _frozen(V))
        object.__setattr__(self, "diagonals", _frozen(D))

    def covariance(self, k: int) -> NDArray:
        return (self.V * self.diagonals[k]) @ self.V.T

    def to_dict(self) -> dict:
        return {"V": self.V.tolist(), "diagonals": self.diagonals.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EigenBasis":
        return cls(np.asarray(d["V"]), np.asarray(d["diagonals"]))


def _check_pair(p: Gaussian, q: Gaussian):
    if p.dim != q.dim:
        raise DimensionError(f"dimension mismatch: {p.dim} vs {q.dim}")


def kl_divergence(p: Gaussian, q: Gaussian) -> float:
    """KL(p || q) between two Gaussians, with the conventional factor 1/2."""
    _check_pair(p, q)
    Lq = np.linalg.cholesky(q.cov)
    Lp = np.linalg.cholesky(p.cov)
    diff = q.mean - p.mean
    a = np.linalg.solve(Lq, diff)
    B = np.linalg.solve(Lq, Lp)
    logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(Lp)))
    val = 0.5 * (np.sum(B * B) + a @ a - p.dim + logdet_q - logdet_p)
    return max(float(val), 0.0)


def w2_distance(p: Gaussian, q: Gaussian) -> float:
    """Type-2 Wasserstein distance between two Gaussians."""
    _check_pair(p, q)
    rq = matrix_sqrt(q.cov)
    cross = matrix_sqrt(rq @ p.cov @ rq)
    sq = np.sum((p.mean - q.mean) ** 2) + np.trace(p.cov + q.cov - 2.0 * cross)
    return float(np.sqrt(max(sq, 0.0)))


def mixture_moments(components, weights) -> tuple[NDArray, NDArray]:
    """Mean and covariance of the mixture ``sum_k weights[k] * components[k]``."""
    lam = check_simplex(weights)
    if len(components) != lam.size:
        raise DimensionError(f"{len(components)} components but {lam.size} weights")
    means = np.array([c.mean for c in components])
    mean = lam @ means
    second = sum(w * (np.outer(c.mean, c.mean) + c.cov) for w, c in zip(lam, components))
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)
