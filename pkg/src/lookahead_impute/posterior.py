"""Time-truncated Gaussian posteriors of the mean vector and their projection
onto a shared eigenbasis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DataError, NotPDError, ObservabilityError
from .gaussian import EigenBasis, Gaussian, check_symmetric, sym_eig
from .panel import Panel

FORWARD_KL = "forward_kl"
BACKWARD_KL = "backward_kl"


@dataclass(frozen=True)
class TruncationSchedule:
    """Strictly increasing truncation times ``T_1 < ... < T_K``.

    ``T_1`` is the training length and ``T_K`` the end of the test block.
    """

    times: tuple

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        if len(times) < 2:
            raise ValueError(f"need at least two truncation times, got {times}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"truncation times must be strictly increasing: {times}")
        object.__setattr__(self, "times", times)

    @property
    def K(self) -> int:
        return len(self.times)


def make_schedule(K: int, T_train: int, T_test: int) -> TruncationSchedule:
    """Equispaced truncation times from ``T_train`` to ``T_train + T_test``.

    ``T_k = T_train + round((k - 1) * T_test / (K - 1))`` with halves
    rounded up.
    """
    if not 2 <= K <= T_test + 1:
        raise ValueError(f"K must lie in [2, T_test + 1] = [2, {T_test + 1}], got {K}")
    # integer form of floor(k * T_test / (K - 1) + 1/2)
    times = [T_train + (2 * k * T_test + K - 1) // (2 * (K - 1)) for k in range(K)]
    if len(set(times)) != K:
        raise ValueError(f"rounding collision in truncation schedule {times}")
    return TruncationSchedule(tuple(times))


@dataclass(frozen=True)
class GaussianPrior:
    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        g = Gaussian(self.mean, self.cov)
        object.__setattr__(self, "mean", g.mean)
        object.__setattr__(self, "cov", g.cov)


class _Accumulator:
    """Running zero-filled precision and information sums over panel rows."""

    def __init__(self, omega: NDArray):
        self.omega = omega
        self.n = omega.shape[0]
        self.precision = np.zeros((self.n, self.n))
        self.info = np.zeros(self.n)
        self._inv = {}

    def _block_inverse(self, obs: NDArray):
        key = obs.tobytes()
        hit = self._inv.get(key)
        if hit is None:
            idx = np.flatnonzero(obs)
            hit = (idx, np.linalg.inv(self.omega[np.ix_(idx, idx)]))
            self._inv[key] = hit
        return hit

    def add_rows(self, values: NDArray, mask: NDArray):
        if values.shape[0] == 0:
            return
        patterns, inverse = np.unique(~mask, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        for p, obs in enumerate(patterns):
            if not obs.any():
                continue
            rows = inverse == p
            idx, W = self._block_inverse(obs)
            xsum = values[np.ix_(rows, idx)].sum(axis=0)
            self.precision[np.ix_(idx, idx)] += rows.sum() * W
            self.info[idx] += W @ xsum


def _finalize(precision, info, prior, observed, T_k, assets):
    if prior is None:
        if not observed.all():
            j = int(np.flatnonzero(~observed)[0])
            raise ObservabilityError(j, T_k, assets[j])
    else:
        P0 = np.linalg.inv(prior.cov)
        precision = precision + P0
        info = info + P0 @ prior.mean
    precision = 0.5 * (precision + precision.T)
    try:
        L = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise NotPDError(f"posterior precision at T_k={T_k} is singular") from None
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    cov = Linv.T @ Linv
    return Gaussian(cov @ info, cov)


def _check_omega(omega, n):
    omega = check_symmetric(np.asarray(omega, dtype=float))
    if omega.shape != (n, n):
        raise DataError(f"Omega has shape {omega.shape}, panel has {n} assets")
    if np.linalg.eigvalsh(omega)[0] <= 0:
        raise NotPDError("Omega is not positive definite")
    return omega


def posterior(panel: Panel, omega: ArrayLike, T_k: Optional[int] = None, prior: Optional[GaussianPrior] = None) -> Gaussian:
    """Posterior of the mean vector given panel rows ``[0, T_k)``.

    Each row contributes the inverse of ``Omega`` restricted to its
    observed coordinates, embedded back at those coordinates with zeros
    elsewhere. ``prior=None`` is the flat prior, which requires every
    asset to be observed at least once before ``T_k``.
    """
    T_k = panel.n_train if T_k is None else int(T_k)
    omega = _check_omega(omega, panel.n_assets)
    acc = _Accumulator(omega)
    acc.add_rows(panel.values[:T_k], panel.mask[:T_k])
    observed = (~panel.mask[:T_k]).any(axis=0)
    return _finalize(acc.precision, acc.info, prior, observed, T_k, panel.assets)


@dataclass(frozen=True)
class PosteriorSet:
    """K elementary posteriors, their truncation schedule and an optional shared basis."""

    posteriors: tuple
    schedule: TruncationSchedule
    basis: Optional[EigenBasis] = None

    def __post_init__(self):
        posts = tuple(self.posteriors)
        if len(posts) != self.schedule.K:
            raise ValueError(f"{len(posts)} posteriors for a schedule of length {self.schedule.K}")
        if len({p.dim for p in posts}) != 1:
            raise ValueError("posteriors have different dimensions")
        object.__setattr__(self, "posteriors", posts)
        if self.basis is not None:
            for k, p in enumerate(posts):
                S = self.basis.covariance(k)
                err = np.linalg.norm(S - p.cov) / max(1.0, np.linalg.norm(p.cov))
                if err > 1e-8:
                    raise ValueError(f"posterior {k} is not diagonal in the shared basis (err {err:.2e})")

    @property
    def K(self) -> int:
        return len(self.posteriors)

    @property
    def dim(self) -> int:
        return self.posteriors[0].dim

    @property
    def means(self) -> NDArray:
        return np.array([p.mean for p in self.posteriors])

    @property
    def covs(self) -> NDArray:
        return np.array([p.cov for p in self.posteriors])

    def subset(self, indices: Sequence[int]) -> "PosteriorSet":
        indices = list(indices)
        basis = None
        if self.basis is not None:
            basis = EigenBasis(self.basis.V, self.basis.diagonals[indices])
        times = tuple(self.schedule.times[i] for i in indices)
        return PosteriorSet(tuple(self.posteriors[i] for i in indices), TruncationSchedule(times), basis)

    def to_dict(self) -> dict:
        return {
            "schedule": list(self.schedule.times),
            "posteriors": [p.to_dict() for p in self.posteriors],
            "basis": None if self.basis is None else self.basis.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorSet":
        basis = None if d.get("basis") is None else EigenBasis.from_dict(d["basis"])
        return cls(
            tuple(Gaussian.from_dict(p) for p in d["posteriors"]),
            TruncationSchedule(tuple(d["schedule"])),
            basis,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def generate_posteriors(panel: Panel, omega: ArrayLike, schedule: TruncationSchedule, prior: Optional[GaussianPrior] = None) -> PosteriorSet:
    """All K truncated posteriors, sharing one pass over the panel rows.

    Observability is checked at every truncation time, not only the last.
    """
    omega = _check_omega(omega, panel.n_assets)
    if schedule.times[-1] > panel.shape[0]:
        raise DataError(f"truncation time {schedule.times[-1]} exceeds panel length {panel.shape[0]}")
    acc = _Accumulator(omega)
    out, start = [], 0
    for T_k in schedule.times:
        acc.add_rows(panel.values[start:T_k], panel.mask[start:T_k])
        start = T_k
        observed = (~panel.mask[:T_k]).any(axis=0)
        out.append(_finalize(acc.precision.copy(), acc.info.copy(), prior, observed, T_k, panel.assets))
    return PosteriorSet(tuple(out), schedule)


def project_to_basis(pset: PosteriorSet, mode: str = FORWARD_KL, V: Optional[ArrayLike] = None) -> PosteriorSet:
    """Replace each covariance by its best approximation diagonal in basis ``V``.

    ``V`` defaults to the eigenbasis of the first posterior covariance.
    In ``forward_kl`` mode ``d_kj = v_j^T Sigma_k v_j``, the minimizer of
    KL(pi_k || pi_k'); in ``backward_kl`` mode
    ``d_kj = 1 / [V^T Sigma_k^{-1} V]_jj``, the minimizer of KL(pi_k' || pi_k).
    Means are left unchanged.
    """
    if V is None:
        _, V = sym_eig(pset.posteriors[0].cov)
    V = np.asarray(V, dtype=float)
    diags = []
    for p in pset.posteriors:
        if mode == FORWARD_KL:
            d = np.einsum("ij,ik,kj->j", V, p.cov, V)
        elif mode == BACKWARD_KL:
            d = 1.0 / np.einsum("ij,ik,kj->j", V, np.linalg.inv(p.cov), V)
        else:
            raise ValueError(f"unknown projection mode {mode!r}")
        diags.append(d)
    basis = EigenBasis(V, np.array(diags))
    posts = tuple(Gaussian(p.mean, basis.covariance(k)) for k, p in enumerate(pset.posteriors))
    return PosteriorSet(posts, pset.schedule, basis)
