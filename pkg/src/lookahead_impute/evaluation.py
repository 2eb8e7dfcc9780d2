"""Downstream portfolio task and the ECMSE decomposition.

For one simulated data set ``D`` and imputation ``i`` the regret is
``dR = R_test - R_oos`` of the unit-norm portfolio along the training
mean of the imputed panel. Over ``S`` data sets with ``m`` imputations
each::

    ECBias^2 = max(mean dR, 0)^2
    ECVar    = mean over data sets of the within-set variance (ddof=1)
    ECMSE    = ECBias^2 + ECVar

Standard errors come from a nonparametric bootstrap over data sets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DataError
from .panel import Panel

N_BOOTSTRAP = 1000


def portfolio_weights(panel: Panel) -> NDArray:
    """Unit vector along the training-row mean of a completed panel.

    Raises
    ------
    DataError
        If training cells are still missing or the mean is zero.
    """
    train = panel.values[panel.train_rows]
    if np.isnan(train).any():
        raise DataError("portfolio weights need a completed (imputed) training block")
    mean = train.mean(axis=0)
    norm = np.linalg.norm(mean)
    if not norm > 0:
        raise DataError("training mean is zero; portfolio direction is undefined")
    return mean / norm


def regret(panel_truth: Panel, w: ArrayLike) -> float:
    """``R_test - R_oos`` for portfolio ``w``: mean of ``w^T Z_t`` over each block."""
    w = np.asarray(w, float).reshape(-1)
    test = panel_truth.values[panel_truth.test_rows]
    oos = panel_truth.values[panel_truth.oos_rows]
    if test.shape[0] == 0 or oos.shape[0] == 0:
        raise DataError("regret needs nonempty test and out-of-sample blocks")
    if np.isnan(test).any() or np.isnan(oos).any():
        raise DataError("regret needs fully observed test and out-of-sample blocks")
    return float(np.mean(test @ w) - np.mean(oos @ w))


def ec_estimates(dr: ArrayLike) -> dict:
    """ECMSE, ECBias^2 and ECVar from an ``(S, m)`` table of regrets.

    Rows are data sets and columns imputations. With ``m = 1`` the
    within-set variance is undefined and ECVar / ECMSE are NaN.
    """
    dr = np.atleast_2d(np.asarray(dr, float))
    S, m = dr.shape
    if S == 0:
        nan = float("nan")
        return {"ecmse": nan, "ecbias2": nan, "ecvar": nan, "mean_regret": nan}
    grand = float(dr.mean())
    bias2 = max(grand, 0.0) ** 2
    var = float(dr.var(axis=1, ddof=1).mean()) if m >= 2 else float("nan")
    return {"ecmse": bias2 + var, "ecbias2": bias2, "ecvar": var, "mean_regret": grand}


def _ec_columns(dr):
    """Vectorized estimates for ``dr`` of shape ``(B, S, m)``."""
    grand = dr.mean(axis=(1, 2))
    bias2 = np.maximum(grand, 0.0) ** 2
    m = dr.shape[2]
    var = dr.var(axis=2, ddof=1).mean(axis=1) if m >= 2 else np.full(dr.shape[0], np.nan)
    return bias2 + var, bias2, var


def _cell_seed(seed, a, g):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + (a, g))
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(a, g))


def bootstrap_indices(S: int, n_boot: int = N_BOOTSTRAP, seed=0) -> NDArray:
    """``(n_boot, S)`` resampling indices over data sets."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, S, size=(n_boot, S))


@dataclass
class CellStats:
    mechanism: str
    delta_index: int
    delta_frac: float
    delta_mean: float
    ecmse: float
    ecbias2: float
    ecvar: float
    mean_regret: float
    se_ecmse: float
    se_ecbias2: float
    se_ecvar: float
    requested: int
    completed: int
    fallback: int
    failed: int


CSV_COLUMNS = [f for f in CellStats.__dataclass_fields__]


@dataclass
class EvalReport:
    """ECMSE curves over the tolerance grid, one per mechanism.

    Attributes
    ----------
    cells : list of CellStats
        One entry per (mechanism, grid point).
    optimum : dict
        Per mechanism: grid argmin of the ECMSE and a bootstrap percentile
        interval for it (in grid indices).
    meta : dict
        Counts, seeds and settings.
    """

    cells: list
    optimum: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def mechanisms(self) -> list:
        seen = []
        for c in self.cells:
            if c.mechanism not in seen:
                seen.append(c.mechanism)
        return seen

    def curve(self, mechanism: str, column: str) -> NDArray:
        rows = sorted((c for c in self.cells if c.mechanism == mechanism), key=lambda c: c.delta_index)
        return np.array([getattr(c, column) for c in rows], dtype=float)

    def to_rows(self) -> list:
        return [dict(c.__dict__) for c in self.cells]

    def to_dict(self) -> dict:
        return {"cells": self.to_rows(), "optimum": self.optimum, "meta": self.meta}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in self.to_rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([CellStats(**c) for c in d["cells"]], d.get("optimum", {}), d.get("meta", {}))

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def summarize(mechanisms: Sequence[str], regrets: ArrayLike, status: ArrayLike, deltas: ArrayLike,
              n_boot: int = N_BOOTSTRAP, seed=0, meta: Optional[dict] = None) -> EvalReport:
    """Build an :class:`EvalReport` from raw sweep output.

    Parameters
    ----------
    mechanisms : sequence of str, length M
    regrets : array, shape (S, M, G, m)
        NaN where a run was excluded.
    status : array of str, shape (S, M, G)
        ``"optimal"``, ``"local"``, ``"fallback"`` or ``"failed"``.
        Fallback and failed runs are excluded from the estimates and counted.
    deltas : array, shape (S, M, G)
        Tolerances actually used (the grid scales with each data set).
    """
    dr = np.asarray(regrets, float)
    status = np.asarray(status)
    deltas = np.asarray(deltas, float)
    S, M, G, m = dr.shape
    idx = bootstrap_indices(S, n_boot, seed) if S > 0 else np.zeros((n_boot, 0), int)
    cells, optimum = [], {}
    for a, mech in enumerate(mechanisms):
        boot_ecmse = np.full((n_boot, G), np.nan)
        for g in range(G):
            st = status[:, a, g]
            ok = (st != "fallback") & (st != "failed") & ~np.isnan(dr[:, a, g]).any(axis=1)
            table = dr[ok, a, g]
            est = ec_estimates(table) if table.size else ec_estimates(np.zeros((0, m)))
            if ok.sum() >= 1 and n_boot > 0:
                # shared resamples when nothing was excluded, else a cell-specific stream
                k = int(ok.sum())
                b_idx = idx if k == S else bootstrap_indices(k, n_boot, _cell_seed(seed, a, g))
                e, b2, v = _ec_columns(table[b_idx])
                boot_ecmse[:, g] = e
                se = [float(np.std(x, ddof=1)) if n_boot > 1 else 0.0 for x in (e, b2, v)]
            else:
                se = [float("nan")] * 3
            cells.append(CellStats(
                mechanism=mech, delta_index=g, delta_frac=round(g / (G - 1), 12) if G > 1 else 0.0,
                delta_mean=float(np.mean(deltas[:, a, g])) if S else float("nan"),
                ecmse=est["ecmse"], ecbias2=est["ecbias2"], ecvar=est["ecvar"], mean_regret=est["mean_regret"],
                se_ecmse=se[0], se_ecbias2=se[1], se_ecvar=se[2],
                requested=int(S), completed=int(ok.sum()),
                fallback=int((st == "fallback").sum()), failed=int((st == "failed").sum()),
            ))
        curve = np.array([c.ecmse for c in cells[-G:]])
        if np.all(np.isnan(curve)):
            optimum[mech] = {"delta_index": None, "ci_low": None, "ci_high": None}
            continue
        best = int(np.nanargmin(curve))
        valid = ~np.isnan(boot_ecmse).all(axis=1)
        if valid.any():
            argmins = np.array([np.nanargmin(r) for r in boot_ecmse[valid]])
            lo, hi = np.percentile(argmins, [2.5, 97.5])
            lo, hi = int(np.floor(lo)), int(np.ceil(hi))
        else:
            lo = hi = best
        optimum[mech] = {"delta_index": best, "delta_frac": best / (G - 1) if G > 1 else 0.0,
                         "delta_mean": cells[-G + best].delta_mean, "ecmse": float(curve[best]),
                         "ci_low": lo, "ci_high": hi}
    return EvalReport(cells, optimum, dict(meta or {}))
