"""scikit-learn style wrapper around the fit-aggregate-impute pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .consensus import FORWARD_KL, VTransformedL1Ball, bias_set_from_dict, delta_max, solve
from .consensus.solvers import BACKWARD_KL
from .panel import Panel, estimate_omega
from .posterior import GaussianPrior, generate_posteriors, make_schedule, project_to_basis
from .sampler import COND_EXPECT, ImputationPlan, impute
from .seeding import as_rng


class LookAheadImputer(TransformerMixin, BaseEstimator):
    """Impute training-period returns from a consensus of truncated posteriors.

    ``X`` is a ``(T, n)`` array of returns, rows ordered in time, with NaN
    marking missing cells. The first ``n_train`` rows form the training
    block (the only one allowed to contain NaN) and the next ``n_test``
    rows the testing block whose information is fused with a controlled
    look-ahead bias. Any further rows are ignored by ``fit``.

    Parameters
    ----------
    n_train, n_test : int
    K : int, default=5
        Number of truncation times, equispaced from ``n_train`` to
        ``n_train + n_test``.
    mechanism : str, default="forward_kl"
        One of ``forward_kl``, ``wasserstein``, ``restricted_wasserstein``,
        ``backward_kl``.
    delta : float, optional
        Bias tolerance. When None, ``delta_frac * delta_max`` is used.
    delta_frac : float, default=0.5
    bias_set : dict, default=None
        Bias set description for the non forward-KL mechanisms, e.g.
        ``{"kind": "euclidean_ball"}`` (the default).
    omega : array of shape (n, n), optional
        Noise covariance. Estimated from the complete rows when None.
    prior_mean, prior_cov : arrays, optional
        Gaussian prior on the mean; flat prior when None.
    mode : {"cond_expect", "full_bayes"}, default="cond_expect"
        Used by :meth:`sample`.
    random_state : int, optional

    Attributes
    ----------
    posteriors_ : PosteriorSet
    solution_ : ConsensusSolution
    weights_ : ndarray of shape (K,)
    delta_max_ : float
    delta_ : float
    omega_ : ndarray of shape (n, n)
    n_features_in_ : int
    """

    def __init__(self, n_train, n_test, K=5, mechanism=FORWARD_KL, delta=None, delta_frac=0.5,
                 bias_set=None, omega=None, prior_mean=None, prior_cov=None, mode=COND_EXPECT,
                 random_state=None):
        self.n_train = n_train
        self.n_test = n_test
        self.K = K
        self.mechanism = mechanism
        self.delta = delta
        self.delta_frac = delta_frac
        self.bias_set = bias_set
        self.omega = omega
        self.prior_mean = prior_mean
        self.prior_cov = prior_cov
        self.mode = mode
        self.random_state = random_state

    def _panel(self, X):
        X = check_array(X, ensure_all_finite="allow-nan", dtype=float)
        T = X.shape[0]
        end = self.n_train + self.n_test
        if self.n_train < 1 or self.n_test < 1 or T < end:
            raise ValueError(f"X has {T} rows; need n_train + n_test = {end} with both positive")
        if T == end:
            # Panel needs a nonempty last block; borrow the final test row, which the
            # posteriors still read through the truncation schedule
            if self.n_test < 2:
                raise ValueError("with no rows beyond the testing block, n_test must be at least 2")
            split = (self.n_train, self.n_test - 1, 1)
        else:
            split = (self.n_train, self.n_test, T - end)
        return X, Panel(X, split)

    def fit(self, X, y=None):
        X, panel = self._panel(X)
        self.n_features_in_ = X.shape[1]
        if self.omega is None:
            omega = estimate_omega(panel, rows="complete")
        else:
            omega = check_array(self.omega, dtype=float)
        prior = None
        if self.prior_mean is not None or self.prior_cov is not None:
            prior = GaussianPrior(np.asarray(self.prior_mean, float), np.asarray(self.prior_cov, float))
        schedule = make_schedule(self.K, self.n_train, self.n_test)
        pset = project_to_basis(generate_posteriors(panel, omega, schedule, prior), FORWARD_KL)
        if self.mechanism == FORWARD_KL:
            bias = VTransformedL1Ball(pset.basis.V)
        else:
            bias = bias_set_from_dict(self.bias_set or {"kind": "euclidean_ball"}, n=pset.dim)
        dmax = delta_max(pset, self.mechanism, bias)
        if self.delta is None:
            if not 0.0 <= self.delta_frac <= 1.0:
                raise ValueError(f"delta_frac must lie in [0, 1], got {self.delta_frac}")
            delta = self.delta_frac * dmax
        else:
            delta = float(self.delta)
        kwargs = {"seed": 0 if self.random_state is None else int(self.random_state)} \
            if self.mechanism == BACKWARD_KL else {}
        self.solution_ = solve(self.mechanism, pset, bias, delta, **kwargs)
        self.posteriors_ = pset
        self.omega_ = omega
        self.delta_max_ = dmax
        self.delta_ = delta
        self.weights_ = self.solution_.weights
        return self

    def transform(self, X):
        """Fill missing training cells with their conditional mean at the consensus posterior mean."""
        check_is_fitted(self, "solution_")
        X, panel = self._panel(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, fitted with {self.n_features_in_}")
        filled = ImputationPlan(panel, self.omega_).fill(self.solution_.mean)
        return filled.values.copy()

    def sample(self, X, m=10, random_state=None):
        """``m`` imputed copies of ``X``, each from its own posterior draw."""
        check_is_fitted(self, "solution_")
        X, panel = self._panel(X)
        seed = self.random_state if random_state is None else random_state
        seed = int(as_rng(seed).integers(2**63)) if seed is None else int(seed)
        panels = impute(panel, self.solution_.aggregated, self.omega_, self.mode, m, seed=seed)
        return np.stack([p.values for p in panels])
