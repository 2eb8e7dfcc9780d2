"""Weighted barycenters of Gaussian posteriors.

* forward KL: the precision-weighted Gaussian,
* 2-Wasserstein: weighted mean plus the fixed-point covariance (closed
  form when the covariances commute),
* backward KL: the mixture of the components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..exceptions import ConvergenceError, DimensionError
from ..gaussian import Gaussian, check_simplex, inv_sqrt_pd, matrix_sqrt, mixture_moments
from ..seeding import as_rng


def _components(posteriors):
    return tuple(getattr(posteriors, "posteriors", posteriors))


def _weights(lam, K):
    lam = check_simplex(lam)
    if lam.size != K:
        raise DimensionError(f"{lam.size} weights for {K} distributions")
    return lam


def forward_kl_barycenter(posteriors, lam) -> Gaussian:
    """Minimizer of ``sum_k lam_k KL(pi || pi_k)``.

    ``Sigma = (sum lam_k Sigma_k^-1)^-1`` and
    ``mu = Sigma sum lam_k Sigma_k^-1 mu_k``.
    """
    comps = _components(posteriors)
    lam = _weights(lam, len(comps))
    n = comps[0].dim
    P = np.zeros((n, n))
    h = np.zeros(n)
    for w, c in zip(lam, comps):
        if w == 0:
            continue
        Pk = np.linalg.inv(c.cov)
        P += w * Pk
        h += w * Pk @ c.mean
    cov = np.linalg.inv(0.5 * (P + P.T))
    return Gaussian(cov @ h, 0.5 * (cov + cov.T))


def w2_barycenter_diag(pset, lam) -> Gaussian:
    """2-Wasserstein barycenter of simultaneously diagonal Gaussians.

    With ``Sigma_k = V diag(d_k) V^T`` the covariance is
    ``(sum lam_k Sigma_k^{1/2})^2 = V diag((sum lam_k sqrt(d_k))^2) V^T``.
    """
    basis = getattr(pset, "basis", None)
    if basis is None:
        raise ValueError("w2_barycenter_diag needs a posterior set with a shared eigenbasis")
    lam = _weights(lam, pset.K)
    root = lam @ np.sqrt(basis.diagonals)
    cov = (basis.V * root**2) @ basis.V.T
    return Gaussian(lam @ pset.means, 0.5 * (cov + cov.T))


def w2_fixed_point_residual(S, covs, lam) -> float:
    R = matrix_sqrt(S)
    T = sum(w * matrix_sqrt(R @ C @ R) for w, C in zip(lam, covs))
    return float(np.linalg.norm(S - T))


def w2_barycenter_fixed_point(posteriors, lam, tol: float = 1e-10, max_iter: int = 500) -> Gaussian:
    """2-Wasserstein barycenter by fixed-point iteration on the covariance.

    Iterates ``S <- S^{-1/2} (sum lam_k (S^{1/2} Sigma_k S^{1/2})^{1/2})^2 S^{-1/2}``
    from ``S = sum lam_k Sigma_k`` until the residual of
    ``S = sum lam_k (S^{1/2} Sigma_k S^{1/2})^{1/2}`` is at most ``tol``
    in Frobenius norm.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    comps = _components(posteriors)
    lam = _weights(lam, len(comps))
    covs = [c.cov for c in comps]
    mean = lam @ np.array([c.mean for c in comps])
    S = sum(w * C for w, C in zip(lam, covs))
    res = np.inf
    for it in range(max_iter + 1):
        R = matrix_sqrt(S)
        T = sum(w * matrix_sqrt(R @ C @ R) for w, C in zip(lam, covs))
        res = float(np.linalg.norm(S - T))
        if res <= tol:
            return Gaussian(mean, S)
        if it == max_iter:
            break
        Ri = inv_sqrt_pd(S)
        S = Ri @ T @ T @ Ri
        S = 0.5 * (S + S.T)
    raise ConvergenceError(f"fixed point did not converge in {max_iter} iterations (residual {res:.3e})", res)


@dataclass(frozen=True)
class MixtureHandle:
    """Finite Gaussian mixture ``sum_k weights[k] * components[k]``."""

    components: tuple
    weights: NDArray

    def __post_init__(self):
        comps = tuple(self.components)
        lam = _weights(self.weights, len(comps)).copy()
        lam.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", lam)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def moments(self) -> tuple[NDArray, NDArray]:
        return mixture_moments(self.components, self.weights)

    @property
    def mean(self) -> NDArray:
        return self.moments()[0]

    @property
    def cov(self) -> NDArray:
        return self.moments()[1]

    def sample(self, size: int, seed=None) -> NDArray:
        """Categorical component draw followed by a Gaussian draw."""
        rng = as_rng(seed)
        K = len(self.components)
        labels = rng.choice(K, size=size, p=self.weights / self.weights.sum())
        out = np.empty((size, self.dim))
        for k in range(K):
            sel = labels == k
            if sel.any():
                c = self.components[k]
                L = np.linalg.cholesky(c.cov)
                out[sel] = c.mean + rng.standard_normal((sel.sum(), self.dim)) @ L.T
        return out

    def to_dict(self):
        return {"weights": self.weights.tolist(), "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Gaussian.from_dict(c) for c in d["components"]), np.asarray(d["weights"]))


def backward_kl_barycenter(posteriors, lam) -> MixtureHandle:
    """Minimizer of ``sum_k lam_k KL(pi_k || pi)``: the lam-weighted mixture."""
    comps = _components(posteriors)
    return MixtureHandle(comps, _weights(lam, len(comps)))
