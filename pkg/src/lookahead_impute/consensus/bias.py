"""Bias penalizations ``l_Z(mu) = sup_{z in Z} z^T mu`` for the supported sets Z."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linprog

from ..exceptions import UnboundedBiasError


@dataclass(frozen=True)
class EuclideanBall:
    """Unit Euclidean ball; ``l_Z(mu) = ||mu||_2``."""

    def to_dict(self):
        return {"kind": "euclidean_ball"}


@dataclass(frozen=True)
class Singleton1n:
    """``Z = {1_n}``; a one-sided penalty ``l_Z(mu) = 1^T mu`` that can be negative."""

    def to_dict(self):
        return {"kind": "singleton_1n"}


@dataclass(frozen=True)
class VTransformedL1Ball:
    """``Z = {z : ||V^T z||_1 <= 1}``, so that ``l_Z(mu) = ||V^T mu||_inf``."""

    V: NDArray

    def __post_init__(self):
        V = np.array(self.V, dtype=float, copy=True)
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    def to_dict(self):
        return {"kind": "v_l1_ball", "V": self.V.tolist()}


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """``Z = {z : A z <= b}``, required nonempty and bounded."""

    A: NDArray
    b: NDArray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float, copy=True))
        b = np.array(self.b, dtype=float, copy=True).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has length {b.size}")
        n = A.shape[1]
        for direction in np.vstack([np.eye(n), -np.eye(n)]):
            res = linprog(-direction, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
            if res.status == 2:
                raise ValueError("polyhedron {z : A z <= b} is empty")
            if res.status == 3:
                raise ValueError("polyhedron {z : A z <= b} is unbounded")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def box(cls, n: int, radius: float = 1.0) -> "Polyhedron":
        """The sup-norm ball of the given radius (its support function is ``radius * ||.||_1``)."""
        I = np.eye(n)
        return cls(np.vstack([I, -I]), np.full(2 * n, radius))

    def to_dict(self):
        return {"kind": "polyhedron", "A": self.A.tolist(), "b": self.b.tolist()}


BiasSet = Union[EuclideanBall, Singleton1n, VTransformedL1Ball, Polyhedron]


def bias_value(bset: BiasSet, mu) -> float:
    """Evaluate ``l_Z(mu)``.

    For a polyhedron the value is computed from the dual LP
    ``inf b^T w  s.t.  A^T w = mu, w >= 0``; an infeasible dual means the
    support function is unbounded in direction ``mu``.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if isinstance(bset, EuclideanBall):
        return float(np.linalg.norm(mu))
    if isinstance(bset, Singleton1n):
        return float(mu.sum())
    if isinstance(bset, VTransformedL1Ball):
        return float(np.max(np.abs(bset.V.T @ mu)))
    if isinstance(bset, Polyhedron):
        m = bset.A.shape[0]
        res = linprog(bset.b, A_eq=bset.A.T, b_eq=mu, bounds=[(0, None)] * m, method="highs")
        if res.status == 2:
            raise UnboundedBiasError(
                "support function is unbounded: the dual LP 'inf b^T w, A^T w = mu, w >= 0' "
                "has no optimal solution"
            )
        if res.status != 0:
            raise UnboundedBiasError(f"polyhedral bias LP failed: {res.message}")
        return float(res.fun)
    raise TypeError(f"unsupported bias set {bset!r}")


def bias_set_from_dict(d: dict, n: int | None = None, V=None) -> BiasSet:
    kind = d.get("kind")
    if kind == "euclidean_ball":
        return EuclideanBall()
    if kind == "singleton_1n":
        return Singleton1n()
    if kind == "v_l1_ball":
        return VTransformedL1Ball(np.asarray(d["V"]) if "V" in d else V)
    if kind == "polyhedron":
        return Polyhedron(np.asarray(d["A"]), np.asarray(d["b"]))
    if kind == "box":
        return Polyhedron.box(n, float(d.get("radius", 1.0)))
    raise ValueError(f"unknown bias set kind {kind!r}")
