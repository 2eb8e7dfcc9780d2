"""Optimal consensus weights.

Each solver looks for simplex weights ``lam`` minimizing the trace of the
aggregated covariance subject to ``l_Z(mean(lam) - mu_1) <= delta``:

* forward KL: second-order cone program in ``(lam, gamma)`` with the
  bias set ``{z : ||V^T z||_1 <= 1}``,
* Wasserstein: convex quadratic ``lam^T G lam`` with
  ``G_ij = Tr(Sigma_i^{1/2} Sigma_j^{1/2})``,
* backward KL: concave quadratic, solved locally from many starts.

Convex problems go through the barrier method in :mod:`._ipm`. A solver
failure never aborts: the solution falls back to ``lam = e_1`` (zero
look-ahead bias, always feasible) and the status says so.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray

from ..exceptions import IncompatibleBiasSetError, LookAheadImputeError
from ..gaussian import Gaussian
from ..posterior import FORWARD_KL, PosteriorSet, project_to_basis
from ..seeding import RESTART, as_rng
from . import _ipm
from .barycenter import (
    MixtureHandle,
    backward_kl_barycenter,
    forward_kl_barycenter,
    w2_barycenter_diag,
)
from .bias import BiasSet, EuclideanBall, Polyhedron, Singleton1n, VTransformedL1Ball, bias_value

log = logging.getLogger(__name__)

WASSERSTEIN = "wasserstein"
RESTRICTED_WASSERSTEIN = "restricted_wasserstein"
BACKWARD_KL = "backward_kl"
MECHANISMS = (FORWARD_KL, WASSERSTEIN, RESTRICTED_WASSERSTEIN, BACKWARD_KL)

OPTIMAL = "optimal"
LOCAL = "local"
FALLBACK = "fallback"

FEAS_TOL = 1e-7
# tolerances at or below this (relative to the mean scale) are solved as exact equalities
ZERO_DELTA = 1e-12


@dataclass(frozen=True)
class ConsensusSolution:
    mechanism: str
    weights: NDArray
    aggregated: Union[Gaussian, MixtureHandle]
    delta: float
    objective: float
    bias_attained: float
    status: str = OPTIMAL
    message: str = field(default="", compare=False)

    @property
    def mean(self) -> NDArray:
        return self.aggregated.mean

    @property
    def cov(self) -> NDArray:
        return self.aggregated.cov

    def to_dict(self) -> dict:
        agg = self.aggregated.to_dict()
        return {
            "mechanism": self.mechanism,
            "weights": self.weights.tolist(),
            "delta": self.delta,
            "objective": self.objective,
            "bias_attained": self.bias_attained,
            "status": self.status,
            "message": self.message,
            "aggregated": {"type": "mixture" if isinstance(self.aggregated, MixtureHandle) else "gaussian", **agg},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusSolution":
        agg = d["aggregated"]
        aggregated = MixtureHandle.from_dict(agg) if agg["type"] == "mixture" else Gaussian.from_dict(agg)
        return cls(d["mechanism"], np.asarray(d["weights"]), aggregated, d["delta"], d["objective"],
                   d["bias_attained"], d["status"], d.get("message", ""))


# -- delta grid ----------------------------------------------------------------------


def _check_pair(mechanism, bias):
    if mechanism == FORWARD_KL:
        if not isinstance(bias, VTransformedL1Ball):
            raise IncompatibleBiasSetError(
                f"forward KL needs the V-transformed l1-ball bias set, got {type(bias).__name__}"
            )
    elif mechanism in (WASSERSTEIN, RESTRICTED_WASSERSTEIN, BACKWARD_KL):
        if not isinstance(bias, (EuclideanBall, Polyhedron, Singleton1n)):
            raise IncompatibleBiasSetError(
                f"{mechanism} supports Euclidean-ball, polyhedral or 1_n bias sets, got {type(bias).__name__}"
            )
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")


def delta_max(pset: PosteriorSet, mechanism: str, bias: BiasSet) -> float:
    """Smallest tolerance at which ``lam = e_K`` is feasible.

    For forward KL this is ``max_j |v_j^T (mu_K - mu_1)|``; for the other
    mechanisms ``l_Z(mu_K - mu_1)`` (the unsquared norm for the Euclidean
    ball). Negative values (possible for the one-sided 1_n set) clip to 0.
    """
    _check_pair(mechanism, bias)
    gap = pset.posteriors[-1].mean - pset.posteriors[0].mean
    return max(0.0, bias_value(bias, gap))


def delta_grid(dmax: float, count: int = 10) -> NDArray:
    if count < 2:
        raise ValueError(f"delta grid needs at least 2 points, got {count}")
    if dmax < 0:
        raise ValueError(f"delta_max must be nonnegative, got {dmax}")
    return np.linspace(0.0, dmax, count)


# -- helpers ---------------------------------------------------------------------------


def _clean_simplex(lam):
    lam = np.clip(np.asarray(lam, float), 0.0, None)
    return lam / lam.sum()


def _zero_delta(delta, means):
    return delta <= ZERO_DELTA * max(1.0, float(np.max(np.abs(means))))


def _fallback(mechanism, pset, bias, delta, exc, build):
    lam = np.zeros(pset.K)
    lam[0] = 1.0
    log.warning("%s solver failed at delta=%g (%s); falling back to e_1", mechanism, delta, exc)
    sol = build(lam)
    return ConsensusSolution(mechanism, lam, sol[0], float(delta), sol[1], sol[2], FALLBACK, str(exc))


def _ensure_basis(pset):
    return pset if pset.basis is not None else project_to_basis(pset, FORWARD_KL)


# -- forward KL ------------------------------------------------------------------------


def forward_kl_objective(pset: PosteriorSet, lam) -> float:
    """``Tr(Sigma_hat) = sum_j 1 / sum_k lam_k / d_kj`` in the shared basis."""
    return float(np.sum(1.0 / (np.asarray(lam) @ (1.0 / pset.basis.diagonals))))


def _forward_kl_program(pset, mu1_coords, delta):
    V = pset.basis.V
    a = 1.0 / pset.basis.diagonals                 # a_kj = 1 / d_kj
    m = pset.means @ V                              # m_kj = v_j^T mu_k
    c = m * a                                       # c_kj
    K, n = a.shape
    upper = c - (delta + mu1_coords) * a            # sum_k upper_kj lam_k <= 0
    lower = (mu1_coords - delta) * a - c            # sum_k lower_kj lam_k <= 0
    G = np.vstack([-np.eye(K), upper.T, lower.T])
    G = np.hstack([G, np.zeros((G.shape[0], n))])
    h = np.zeros(G.shape[0])
    A = np.concatenate([np.ones(K), np.zeros(n)])[None, :]
    return a, _ipm.LinearSystem.build(K + n, G, h, A, [1.0])


def solve_forward_kl(pset: PosteriorSet, bias: Optional[VTransformedL1Ball], delta: float) -> ConsensusSolution:
    """Minimum-trace forward-KL consensus under ``||V^T (mu_hat - mu_1)||_inf <= delta``.

    Solves, over ``lam`` in the simplex and ``gamma >= 0``::

        min  sum_j gamma_j
        s.t. sum_k c_kj lam_k <= (delta + v_j^T mu_1) sum_k lam_k / d_kj
             sum_k c_kj lam_k >= (v_j^T mu_1 - delta) sum_k lam_k / d_kj
             || (2, s_j - gamma_j) ||_2 <= s_j + gamma_j,  s_j = sum_k lam_k / d_kj

    with ``c_kj = v_j^T mu_k / d_kj``. The posterior set must carry a
    shared eigenbasis (see :func:`project_to_basis`); ``bias=None`` uses
    that basis.
    """
    if pset.basis is None:
        raise ValueError("solve_forward_kl needs a posterior set with a shared eigenbasis")
    if bias is None:
        bias = VTransformedL1Ball(pset.basis.V)
    _check_pair(FORWARD_KL, bias)
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if not np.allclose(bias.V, pset.basis.V, atol=1e-10):
        raise IncompatibleBiasSetError("bias set basis V differs from the posterior basis")
    mu1 = pset.posteriors[0].mean

    def build(lam):
        agg = forward_kl_barycenter(pset, lam)
        return agg, forward_kl_objective(pset, lam), bias_value(bias, agg.mean - mu1)

    try:
        K, n = pset.K, pset.dim
        d_eff = 0.0 if _zero_delta(delta, pset.means) else float(delta)
        a, system = _forward_kl_program(pset, pset.basis.V.T @ mu1, d_eff)
        free = np.r_[np.zeros(K, bool), np.ones(n, bool)]
        x0, system = _ipm.find_interior(system, free)
        lam0 = x0[:K]
        x0[K:] = 2.0 / (lam0 @ a)
        cones = _ipm.RotatedCones(np.hstack([a.T, np.zeros((n, n))]), K + np.arange(n))
        res = _ipm.barrier_minimize(_ipm.linear_objective(np.r_[np.zeros(K), np.ones(n)]),
                                    system, x0, [cones])
        lam = _clean_simplex(res.x[:K])
        agg, obj, b = build(lam)
        if b > delta + FEAS_TOL:
            raise LookAheadImputeError(f"solution violates the bias bound ({b:.3e} > {delta:.3e})")
    except Exception as exc:  # noqa: BLE001 - sweeps must survive solver failures
        return _fallback(FORWARD_KL, pset, bias, delta, exc, build)
    return ConsensusSolution(FORWARD_KL, lam, agg, float(delta), obj, b, OPTIMAL,
                             f"barrier gap {res.gap:.1e}, {res.newton_steps} Newton steps")


# -- Wasserstein -------------------------------------------------------------------------


def wasserstein_gram(pset: PosteriorSet) -> NDArray:
    """``G_ij = Tr(Sigma_i^{1/2} Sigma_j^{1/2})`` for a set with a shared basis."""
    R = np.sqrt(pset.basis.diagonals)
    return R @ R.T


def _mean_constraint(pset, bias, delta, nvar_extra=0):
    """Linear system and barriers encoding ``l_Z(M^T lam - mu_1) <= delta`` on ``x = (lam, extra)``."""
    M = pset.means
    mu1 = M[0]
    K, n = M.shape
    nv = K + nvar_extra
    G = [np.hstack([-np.eye(K), np.zeros((K, nvar_extra))])]
    h = [np.zeros(K)]
    A = [np.r_[np.ones(K), np.zeros(nvar_extra)][None, :]]
    b = [np.ones(1)]
    barriers = []
    zero = _zero_delta(delta, M)
    if isinstance(bias, EuclideanBall):
        if zero:
            A.append(np.hstack([(M - mu1).T, np.zeros((n, nvar_extra))]))
            b.append(np.zeros(n))
        else:
            barriers.append(_ipm.EuclideanBall(np.hstack([M.T, np.zeros((n, nvar_extra))]), mu1, delta))
    elif isinstance(bias, Singleton1n):
        G.append(np.r_[M.sum(axis=1), np.zeros(nvar_extra)][None, :])
        h.append(np.array([mu1.sum() + (0.0 if zero else delta)]))
    elif isinstance(bias, Polyhedron):
        m = bias.A.shape[0]
        assert nvar_extra == m
        # w >= 0, b^T w <= delta, A^T w = M^T lam - mu_1
        G.append(np.hstack([np.zeros((m, K)), -np.eye(m)]))
        h.append(np.zeros(m))
        G.append(np.r_[np.zeros(K), bias.b][None, :])
        h.append(np.array([0.0 if zero else delta]))
        A.append(np.hstack([-M.T, bias.A.T]))
        b.append(-mu1)
    system = _ipm.LinearSystem.build(nv, np.vstack(G), np.concatenate(h), np.vstack(A), np.concatenate(b))
    return system, barriers


def _interior_start(pset, bias, delta, system, barriers):
    """Strictly feasible start; for the Euclidean ball shrink toward ``e_1``."""
    K = pset.K
    if barriers:
        M = pset.means
        u = np.full(K, 1.0 / K)
        e1 = np.eye(K)[0]
        step = np.linalg.norm(M.T @ (u - e1))
        eps = 0.5 if step == 0 else min(0.5, 0.5 * delta / step)
        return (1 - eps) * e1 + eps * u, system
    return _ipm.find_interior(system)


def _convex_mean_program(pset, bias, delta, objective_on_lam):
    K = pset.K
    extra = bias.A.shape[0] if isinstance(bias, Polyhedron) else 0
    system, barriers = _mean_constraint(pset, bias, delta, extra)
    x0, system = _interior_start(pset, bias, delta, system, barriers)
    obj = objective_on_lam(K, extra)
    return _ipm.barrier_minimize(obj, system, x0, barriers)


def solve_wasserstein(pset: PosteriorSet, bias: BiasSet, delta: float,
                      mechanism: str = WASSERSTEIN) -> ConsensusSolution:
    """Minimum-trace Wasserstein consensus: ``min lam^T G lam`` under the mean bias bound.

    The set is projected onto the eigenbasis of its first covariance if it
    has no shared basis yet.
    """
    _check_pair(WASSERSTEIN, bias)
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    pset = _ensure_basis(pset)
    Gram = wasserstein_gram(pset)
    mu1 = pset.posteriors[0].mean

    def build(lam):
        agg = w2_barycenter_diag(pset, lam)
        return agg, float(lam @ Gram @ lam), bias_value(bias, agg.mean - mu1)

    def objective(K, extra):
        Q = np.zeros((K + extra, K + extra))
        Q[:K, :K] = Gram
        return _ipm.quadratic_objective(Q)

    try:
        res = _convex_mean_program(pset, bias, delta, objective)
        lam = _clean_simplex(res.x[: pset.K])
        agg, obj, b = build(lam)
        if b > delta + FEAS_TOL:
            raise LookAheadImputeError(f"solution violates the bias bound ({b:.3e} > {delta:.3e})")
    except Exception as exc:  # noqa: BLE001
        return _fallback(mechanism, pset, bias, delta, exc, build)
    return ConsensusSolution(mechanism, lam, agg, float(delta), obj, b, OPTIMAL,
                             f"barrier gap {res.gap:.1e}, {res.newton_steps} Newton steps")


def restricted_wasserstein(pset: PosteriorSet, bias: BiasSet, delta: float) -> ConsensusSolution:
    """Wasserstein consensus of the first and last posteriors only.

    The two-point barycenter is McCann's interpolation; weights are
    reported for ``(pi_1, pi_K)``.
    """
    if pset.K < 2:
        raise ValueError("restricted Wasserstein needs at least two posteriors")
    pset = _ensure_basis(pset)
    return solve_wasserstein(pset.subset([0, pset.K - 1]), bias, delta, mechanism=RESTRICTED_WASSERSTEIN)


# -- backward KL -------------------------------------------------------------------------


def backward_kl_objective(pset: PosteriorSet, lam) -> float:
    """``sum_k lam_k Tr(mu_k mu_k^T + Sigma_k) - ||sum_k lam_k mu_k||^2``."""
    lam = np.asarray(lam, float)
    M = pset.means
    lin = np.einsum("kj,kj->k", M, M) + np.trace(pset.covs, axis1=1, axis2=2)
    mean = lam @ M
    return float(lam @ lin - mean @ mean)


def _simplex_grid(K, step):
    N = int(round(1.0 / step))
    if K == 1:
        return np.ones((1, 1))
    if K == 2:
        i = np.arange(N + 1)
        return np.column_stack([i, N - i]) / N
    if K == 3:
        i, j = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
        keep = i + j <= N
        i, j = i[keep], j[keep]
        return np.column_stack([i, j, N - i - j]) / N
    raise ValueError("grid search is only offered for K <= 3")


def _bias_values(bias, diffs):
    if isinstance(bias, EuclideanBall):
        return np.linalg.norm(diffs, axis=1)
    if isinstance(bias, Singleton1n):
        return diffs.sum(axis=1)
    return np.array([bias_value(bias, d) for d in diffs])


def solve_backward_kl(pset: PosteriorSet, bias: BiasSet, delta: float, restarts: int = 32,
                      seed=0, grid_step: float = 1e-3) -> ConsensusSolution:
    """Best local minimizer of the concave backward-KL trace objective.

    Local search is successive linearization: since the objective is
    concave, minimizing its tangent over the feasible set never increases
    it, and the iteration stops at a vertex-like KKT point. Starts are
    ``restarts`` Dirichlet(1) draws plus every feasible vertex ``e_k``;
    for ``K <= 3`` the best point of a ``grid_step`` simplex grid joins the
    comparison. The result is LOCAL, not a certified global optimum.
    """
    _check_pair(BACKWARD_KL, bias)
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    K = pset.K
    M = pset.means
    mu1 = M[0]
    lin = np.einsum("kj,kj->k", M, M) + np.trace(pset.covs, axis1=1, axis2=2)
    MMt = M @ M.T

    def f(lam):
        return float(lam @ lin - lam @ MMt @ lam)

    def build(lam):
        agg = backward_kl_barycenter(pset, lam)
        return agg, f(lam), bias_value(bias, agg.mean - mu1)

    def feasible(lam):
        return bias_value(bias, M.T @ lam - mu1) <= delta + FEAS_TOL

    def linearized_step(grad):
        def objective(Kv, extra):
            return _ipm.linear_objective(np.r_[grad, np.zeros(extra)])
        res = _convex_mean_program(pset, bias, delta, objective)
        return _clean_simplex(res.x[:K])

    rng = as_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(RESTART,)))
    starts = [np.eye(K)[k] for k in range(K)] + list(rng.dirichlet(np.ones(K), size=restarts))
    best_lam, best_val = np.eye(K)[0], f(np.eye(K)[0])
    n_local = 0
    try:
        for lam in starts:
            if not feasible(lam):
                lam = linearized_step(lin - 2.0 * MMt @ lam)
            val = f(lam)
            for _ in range(100):
                nxt = linearized_step(lin - 2.0 * MMt @ lam)
                nval = f(nxt)
                if nval >= val - 1e-12 * max(1.0, abs(val)):
                    break
                lam, val = nxt, nval
            n_local += 1
            if feasible(lam) and val < best_val:
                best_lam, best_val = lam, val
        message = f"best of {n_local} local searches"
        if K <= 3:
            grid = _simplex_grid(K, grid_step)
            ok = _bias_values(bias, grid @ M - mu1) <= delta
            if ok.any():
                vals = grid[ok] @ lin - np.einsum("ij,jk,ik->i", grid[ok], MMt, grid[ok])
                i = int(np.argmin(vals))
                if vals[i] < best_val:
                    best_lam, best_val = grid[ok][i], float(vals[i])
                    message += "; grid point improved on local search"
    except Exception as exc:  # noqa: BLE001
        return _fallback(BACKWARD_KL, pset, bias, delta, exc, build)
    agg, obj, b = build(best_lam)
    return ConsensusSolution(BACKWARD_KL, best_lam, agg, float(delta), obj, b, LOCAL, message)


# -- dispatch ---------------------------------------------------------------------------


def solve(mechanism: str, pset: PosteriorSet, bias: BiasSet, delta: float, **kwargs) -> ConsensusSolution:
    if mechanism == FORWARD_KL:
        return solve_forward_kl(pset, bias, delta)
    if mechanism == WASSERSTEIN:
        return solve_wasserstein(pset, bias, delta)
    if mechanism == RESTRICTED_WASSERSTEIN:
        return restricted_wasserstein(pset, bias, delta)
    if mechanism == BACKWARD_KL:
        return solve_backward_kl(pset, bias, delta, **kwargs)
    raise ValueError(f"unknown mechanism {mechanism!r}")
