"""Imputation of missing training cells given a draw of the mean vector.

Given ``theta`` and the noise covariance ``Omega``, the missing block
``Y_t`` of row ``t`` is Gaussian conditionally on the observed block
``X_t``::

    Y_t = A_t theta + b_t + eta_t,   eta_t ~ N(0, S_t)

with ``A_t theta = theta_Y - Omega_YX Omega_X^{-1} theta_X``,
``b_t = Omega_YX Omega_X^{-1} X_t`` and the Schur complement
``S_t = Omega_Y - Omega_YX Omega_X^{-1} Omega_XY``. The fully Bayesian
mode adds ``eta_t``; the conditional-expectation mode does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .consensus.barycenter import MixtureHandle
from .exceptions import DimensionError, NotPDError
from .gaussian import Gaussian, check_symmetric
from .panel import Panel
from .seeding import IMPUTE

FULL_BAYES = "full_bayes"
COND_EXPECT = "cond_expect"
MODES = (FULL_BAYES, COND_EXPECT)


@dataclass(frozen=True)
class ConditionalMap:
    """Conditional law of the missing block of one row.

    Attributes
    ----------
    missing, observed : int arrays
        Column indices of ``Y_t`` and ``X_t``.
    A : array, shape (len(missing), n)
        ``A theta = theta_Y - Omega_YX Omega_X^{-1} theta_X``.
    b : array, shape (len(missing),)
    S : array, shape (len(missing), len(missing))
        Conditional covariance of the missing block.
    """

    missing: NDArray
    observed: NDArray
    A: NDArray
    b: NDArray
    S: NDArray

    @property
    def empty(self) -> bool:
        return self.missing.size == 0

    def mean(self, theta) -> NDArray:
        return self.A @ np.asarray(theta, float) + self.b


@dataclass(frozen=True)
class _Pattern:
    missing: NDArray
    observed: NDArray
    coef: NDArray        # Omega_YX Omega_X^{-1}
    S: NDArray
    L: NDArray           # factor of S, L L^T = S


def _check_omega(omega, n=None) -> NDArray:
    omega = check_symmetric(np.asarray(omega, float))
    if n is not None and omega.shape != (n, n):
        raise DimensionError(f"Omega has shape {omega.shape}, expected ({n}, {n})")
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise NotPDError("Omega must be positive definite") from None
    return omega


def _pattern(mask_row: NDArray, omega: NDArray) -> _Pattern:
    miss = np.flatnonzero(mask_row)
    obs = np.flatnonzero(~mask_row)
    O_Y = omega[np.ix_(miss, miss)]
    if obs.size:
        O_YX = omega[np.ix_(miss, obs)]
        cf = np.linalg.cholesky(omega[np.ix_(obs, obs)])
        # coef = O_YX O_X^{-1} through two triangular solves
        tmp = np.linalg.solve(cf, O_YX.T)
        coef = np.linalg.solve(cf.T, tmp).T
        S = O_Y - tmp.T @ tmp
    else:
        coef = np.zeros((miss.size, 0))
        S = O_Y.copy()
    S = 0.5 * (S + S.T)
    w, U = np.linalg.eigh(S) if miss.size else (np.zeros(0), np.zeros((0, 0)))
    if w.size and w[0] < -1e-10 * max(1.0, w[-1]):
        raise NotPDError(f"conditional covariance has eigenvalue {w[0]:.3e}")
    L = U * np.sqrt(np.clip(w, 0.0, None))
    return _Pattern(miss, obs, coef, S, L)


def conditional_map(mask_row: ArrayLike, x_obs: ArrayLike, omega: ArrayLike) -> ConditionalMap:
    """Parameters ``(A_t, b_t, S_t)`` for one row.

    Parameters
    ----------
    mask_row : bool array, shape (n,)
        True for missing coordinates.
    x_obs : array
        Either the observed values only (length ``(~mask_row).sum()``) or a
        full row of length ``n`` whose missing entries are ignored.
    omega : array, shape (n, n)
    """
    mask_row = np.asarray(mask_row, bool).reshape(-1)
    n = mask_row.size
    omega = _check_omega(omega, n)
    x = np.asarray(x_obs, float).reshape(-1)
    n_obs = int((~mask_row).sum())
    if x.size == n and n_obs != n:
        x = x[~mask_row]
    if x.size != n_obs:
        raise DimensionError(f"{x.size} observed values for a row with {n_obs} observed coordinates")
    p = _pattern(mask_row, omega)
    A = np.zeros((p.missing.size, n))
    A[np.arange(p.missing.size), p.missing] = 1.0
    A[:, p.observed] -= p.coef
    return ConditionalMap(p.missing, p.observed, A, p.coef @ x, p.S)


class ImputationPlan:
    """Row groups of a panel sharing a missing pattern, with their conditional factors.

    Building the plan once lets repeated imputations of the same panel
    (different ``theta`` draws, tolerances or mechanisms) skip the
    per-pattern Schur complements.
    """

    def __init__(self, panel: Panel, omega: ArrayLike):
        self.panel = panel
        self.omega = _check_omega(omega, panel.n_assets)
        rows = np.flatnonzero(panel.mask.any(axis=1))
        self.groups = []
        if rows.size:
            keys, inverse = np.unique(panel.mask[rows], axis=0, return_inverse=True)
            for g, key in enumerate(keys):
                members = rows[inverse.reshape(-1) == g]
                self.groups.append((members, _pattern(key, self.omega)))
        # conditional means of all missing cells as an affine map of theta
        n = panel.n_assets
        r, c, base, B = [], [], [], []
        for members, p in self.groups:
            X = panel.values[np.ix_(members, p.observed)]
            Bp = np.zeros((p.missing.size, n))
            Bp[np.arange(p.missing.size), p.missing] = 1.0
            Bp[:, p.observed] -= p.coef
            r.append(np.repeat(members, p.missing.size))
            c.append(np.tile(p.missing, members.size))
            base.append((X @ p.coef.T).reshape(-1))
            B.append(np.tile(Bp, (members.size, 1)))
        self.cells = (np.concatenate(r).astype(int), np.concatenate(c).astype(int)) if r else None
        self._base = np.concatenate(base) if base else np.zeros(0)
        self._B = np.vstack(B) if B else np.zeros((0, n))

    @property
    def n_patterns(self) -> int:
        return len(self.groups)

    def fill(self, theta: ArrayLike, mode: str = COND_EXPECT, rng: Optional[np.random.Generator] = None) -> Panel:
        """Completed panel for one ``theta``; ``rng`` is needed in the fully Bayesian mode."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        theta = np.asarray(theta, float).reshape(-1)
        if theta.size != self.panel.n_assets:
            raise DimensionError(f"theta has length {theta.size}, panel has {self.panel.n_assets} assets")
        if mode == FULL_BAYES and rng is None:
            raise ValueError("full_bayes mode needs a random generator")
        out = self.panel.values.copy()
        if self.cells is not None:
            vals = self._base + self._B @ theta
            if mode == FULL_BAYES:
                noise, k = np.empty_like(vals), 0
                for members, p in self.groups:
                    size = members.size * p.missing.size
                    z = rng.standard_normal((members.size, p.missing.size))
                    noise[k:k + size] = (z @ p.L.T).reshape(-1)
                    k += size
                vals = vals + noise
            out[self.cells] = vals
        return Panel(out, self.panel.split, mask=np.zeros_like(self.panel.mask),
                     assets=self.panel.assets, index=self.panel.index)


def draw_theta(aggregated: Union[Gaussian, MixtureHandle], rng: np.random.Generator) -> NDArray:
    """One draw from the aggregated posterior (mixtures: component first, then Gaussian)."""
    if isinstance(aggregated, MixtureHandle):
        return aggregated.sample(1, rng)[0]
    # eigen factor tolerates near-singular covariances
    w, U = np.linalg.eigh(aggregated.cov)
    z = rng.standard_normal(aggregated.dim)
    return aggregated.mean + U @ (np.sqrt(np.clip(w, 0.0, None)) * z)


def imputation_rng(seed, index: int) -> np.random.Generator:
    """Stream for imputation ``index``.

    ``seed`` is an int (master seed, the stream is keyed ``(IMPUTE, index)``)
    or a ``SeedSequence`` whose spawn key is extended by ``index``.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + (int(index),))
    else:
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(IMPUTE, int(index)))
    return np.random.default_rng(ss)


def impute(panel: Panel, aggregated: Union[Gaussian, MixtureHandle], omega: ArrayLike,
           mode: str = COND_EXPECT, m: int = 1, seed=0, plan: Optional[ImputationPlan] = None,
           indices: Optional[Sequence[int]] = None) -> list[Panel]:
    """Draw ``m`` completed panels.

    Each imputation ``i`` draws its own ``theta`` (and, in the fully
    Bayesian mode, its noise) from ``imputation_rng(seed, i)``, so any
    subset of indices reproduces the same panels in any order.

    Parameters
    ----------
    panel : Panel
    aggregated : Gaussian or MixtureHandle
        Posterior of the mean vector to draw ``theta`` from.
    omega : array, shape (n, n)
    mode : {"cond_expect", "full_bayes"}
    m : int
        Number of imputations.
    seed : int or SeedSequence
    plan : ImputationPlan, optional
        Precomputed plan for ``(panel, omega)``.
    indices : sequence of int, optional
        Imputation indices to produce instead of ``range(m)``.

    Returns
    -------
    list of Panel
        Completed panels with an all-false mask. Observed cells are the
        input values unchanged; test and out-of-sample rows are untouched.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if aggregated.dim != panel.n_assets:
        raise DimensionError(f"posterior dimension {aggregated.dim} != {panel.n_assets} assets")
    if plan is None:
        plan = ImputationPlan(panel, omega)
    elif plan.panel is not panel:
        raise ValueError("plan was built for a different panel")
    if indices is None:
        if m < 1:
            raise ValueError(f"m must be at least 1, got {m}")
        indices = range(m)
    out = []
    for i in indices:
        rng = imputation_rng(seed, i)
        theta = draw_theta(aggregated, rng)
        out.append(plan.fill(theta, mode, rng))
    return out
