"""Small dense log-barrier interior-point solver.

Minimizes a smooth convex objective over ``{x : G x <= h, A x = b}``
intersected with the domains of extra self-concordant barriers (second
order cones written as ``-log(s * g - 1)`` or ``-log(r^2 - |u|^2)``).
Equalities are eliminated by a nullspace parametrization, so redundant
equality rows are harmless. Problems here have at most a few hundred
variables.

Phase I maximizes the smallest normalized slack of the linear rows by an
LP. When that slack is zero (no interior, e.g. a tolerance of exactly
zero), rows that are tight over the whole feasible set are detected with
one LP each and moved to the equalities before retrying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from ..exceptions import ConvergenceError

FACE_TOL = 1e-9


class Infeasible(Exception):
    pass


@dataclass
class LinearSystem:
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray

    @classmethod
    def build(cls, nvar, G=None, h=None, A=None, b=None):
        G = np.zeros((0, nvar)) if G is None else np.atleast_2d(np.asarray(G, float))
        h = np.zeros(0) if h is None else np.asarray(h, float).reshape(-1)
        A = np.zeros((0, nvar)) if A is None else np.atleast_2d(np.asarray(A, float))
        b = np.zeros(0) if b is None else np.asarray(b, float).reshape(-1)
        return cls(G.reshape(-1, nvar), h, A.reshape(-1, nvar), b)

    @property
    def nvar(self):
        return self.G.shape[1]


def _normalized(G, h):
    norms = np.linalg.norm(G, axis=1)
    norms[norms == 0] = 1.0
    return G / norms[:, None], h / norms


def _max_slack(G, h, A, b, free=None):
    """LP: maximize s subject to G x + s <= h, A x = b, s <= 1.

    ``free`` marks variables that do not enter the linear system and are
    pinned to zero here (the caller fills them afterwards).
    """
    m, nv = G.shape
    c = np.zeros(nv + 1)
    c[-1] = -1.0
    A_ub = np.hstack([G, np.ones((m, 1))]) if m else None
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))]) if A.shape[0] else None
    bounds = [(None, None)] * nv + [(None, 1.0)]
    if free is not None:
        for j in np.flatnonzero(free):
            bounds[j] = (0.0, 0.0)
    res = linprog(c, A_ub=A_ub, b_ub=h if m else None, A_eq=A_eq, b_eq=b if A.shape[0] else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("linear constraints are infeasible")
    if res.status != 0:
        raise ConvergenceError(f"phase-I LP failed: {res.message}")
    return res.x[:-1], -res.fun


def _row_max_slack(G, h, A, b, i, free=None):
    nv = G.shape[1]
    bounds = [(None, None)] * nv
    if free is not None:
        for j in np.flatnonzero(free):
            bounds[j] = (0.0, 0.0)
    res = linprog(G[i], A_ub=G, b_ub=h, A_eq=A if A.shape[0] else None,
                  b_eq=b if A.shape[0] else None, bounds=bounds, method="highs")
    if res.status == 3:
        return np.inf
    if res.status != 0:
        raise ConvergenceError(f"facial-reduction LP failed: {res.message}")
    return h[i] - res.fun


def find_interior(system: LinearSystem, free=None):
    """Strictly feasible point of the linear rows, after facial reduction.

    Returns ``(x, system')`` where ``system'`` has implicit equalities moved
    out of ``G``; ``x`` satisfies every remaining row of ``G`` strictly.
    """
    G, h = _normalized(system.G, system.h)
    A, b = system.A, system.b
    if G.shape[0] == 0:
        x = np.linalg.lstsq(A, b, rcond=None)[0] if A.shape[0] else np.zeros(system.nvar)
        return x, LinearSystem(G, h, A, b)
    x, s = _max_slack(G, h, A, b, free)
    if s > FACE_TOL:
        return x, LinearSystem(G, h, A, b)
    if s < -FACE_TOL:
        raise Infeasible(f"linear constraints are infeasible (max slack {s:.2e})")
    tight = np.array([_row_max_slack(G, h, A, b, i, free) <= FACE_TOL for i in range(G.shape[0])])
    A2 = np.vstack([A, G[tight]])
    b2 = np.concatenate([b, h[tight]])
    G2, h2 = G[~tight], h[~tight]
    if G2.shape[0] == 0:
        x = np.linalg.lstsq(A2, b2, rcond=None)[0]
        return x, LinearSystem(G2, h2, A2, b2)
    x, s = _max_slack(G2, h2, A2, b2, free)
    if s <= 0:
        raise ConvergenceError(f"no relative interior after facial reduction (slack {s:.2e})")
    return x, LinearSystem(G2, h2, A2, b2)


class RotatedCones:
    """Barrier ``-sum_j log(s_j * g_j - 1)`` with ``s = S x`` and ``g = x[idx]``.

    Each term is the second-order cone ``|| (2, s_j - g_j) || <= s_j + g_j``
    up to an additive constant, so each contributes degree 2.
    """

    def __init__(self, S, idx):
        self.S = np.atleast_2d(np.asarray(S, float))
        self.idx = np.asarray(idx, int)
        self.E = np.zeros_like(self.S)
        self.E[np.arange(self.idx.size), self.idx] = 1.0
        self.degree = 2.0 * self.idx.size

    def __call__(self, x):
        s = self.S @ x
        g = x[self.idx]
        q = s * g - 1.0
        if not (np.all(q > 0) and np.all(g > 0)):
            return None
        D = self.S * g[:, None] + self.E * s[:, None]
        iq = 1.0 / q
        grad = -D.T @ iq
        cross = (self.S * iq[:, None]).T @ self.E
        H = (D * iq[:, None] ** 2).T @ D - cross - cross.T
        return -np.sum(np.log(q)), grad, H


class EuclideanBall:
    """Barrier ``-log(r^2 - ||M x - c||^2)``."""

    degree = 1.0

    def __init__(self, M, c, r):
        self.M = np.atleast_2d(np.asarray(M, float))
        self.c = np.asarray(c, float)
        self.r2 = float(r) ** 2

    def __call__(self, x):
        u = self.M @ x - self.c
        q = self.r2 - u @ u
        if not q > 0:
            return None
        du = 2.0 * self.M.T @ u
        H = np.outer(du, du) / q**2 + 2.0 * self.M.T @ self.M / q
        return -np.log(q), du / q, H


@dataclass
class BarrierResult:
    x: np.ndarray
    value: float
    gap: float
    newton_steps: int
    outer_steps: int
    history: list = field(default_factory=list, repr=False)


def barrier_minimize(objective, system: LinearSystem, x0, barriers=(), gap_tol=1e-11,
                     t0=None, mu=20.0, max_newton=200, max_outer=60):
    """Path-following barrier method from a strictly feasible ``x0``.

    ``objective(x)`` returns ``(f, grad, hess)``. Stops when the barrier
    duality-gap bound ``degree / t`` falls below ``gap_tol * max(1, |f|)``.
    """
    G, h, A, b = system.G, system.h, system.A, system.b
    x0 = np.asarray(x0, float)
    if A.shape[0]:
        N = null_space(A, rcond=1e-10)
    else:
        N = np.eye(x0.size)
    if N.shape[1] == 0:
        f = objective(x0)[0]
        return BarrierResult(x0, f, 0.0, 0, 0)

    def phi(x):
        slack = h - G @ x
        if np.any(slack <= 0):
            return None
        val = -np.sum(np.log(slack))
        inv = 1.0 / slack
        grad = G.T @ inv
        H = (G.T * inv**2) @ G
        for bar in barriers:
            out = bar(x)
            if out is None:
                return None
            val += out[0]
            grad = grad + out[1]
            H = H + out[2]
        return val, grad, H

    if phi(x0) is None:
        raise ConvergenceError("barrier start point is not strictly feasible")
    degree = G.shape[0] + sum(bar.degree for bar in barriers)
    x = x0.copy()
    f0 = objective(x)[0]
    t = t0 if t0 is not None else degree / max(abs(f0), 1e-8)
    newton_total = 0
    for outer in range(1, max_outer + 1):
        prev = np.inf
        for _ in range(max_newton):
            f, gf, Hf = objective(x)
            p_val, gp, Hp = phi(x)
            gz = N.T @ (t * gf + gp)
            Hz = N.T @ (t * Hf + Hp) @ N
            Hz = 0.5 * (Hz + Hz.T)
            try:
                dz = -np.linalg.solve(Hz, gz)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(Hz, gz, rcond=None)[0]
            dec2 = -gz @ dz
            # at large t the decrement bottoms out at roundoff level; stop there too
            if dec2 / 2.0 <= 1e-10 or (dec2 < 1e-6 and dec2 > 0.5 * prev):
                break
            prev = dec2
            dx = N @ dz
            base = t * f + p_val
            step = 1.0
            while step > 1e-10:
                xn = x + step * dx
                pn = phi(xn)
                if pn is not None:
                    fn = objective(xn)[0]
                    if t * fn + pn[0] <= base - 0.01 * step * dec2:
                        break
                step *= 0.5
            else:
                break
            x = xn
            newton_total += 1
        f = objective(x)[0]
        gap = degree / t
        if gap <= gap_tol * max(1.0, abs(f)):
            return BarrierResult(x, f, gap, newton_total, outer)
        t *= mu
    f = objective(x)[0]
    return BarrierResult(x, f, degree / t, newton_total, max_outer)


def linear_objective(c):
    c = np.asarray(c, float)
    Z = np.zeros((c.size, c.size))
    return lambda x: (float(c @ x), c, Z)


def quadratic_objective(Q, c=None):
    """``x^T Q x + c^T x`` for symmetric ``Q``."""
    Q = np.asarray(Q, float)
    Q = 0.5 * (Q + Q.T)
    c = np.zeros(Q.shape[0]) if c is None else np.asarray(c, float)
    return lambda x: (float(x @ Q @ x + c @ x), 2.0 * Q @ x + c, 2.0 * Q)
