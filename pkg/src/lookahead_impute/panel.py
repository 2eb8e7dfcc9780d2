"""Returns panel container, missing-data mechanisms, simulator and CSV I/O.

Orientation: rows are time periods and columns are assets. A panel is
split into three consecutive row blocks (train, test, out-of-sample
test); missing values may only occur in the training block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DataError, ObservabilityError
from .seeding import as_rng

MISSING_TOKENS = ("", "NaN", "nan")
MAX_MASK_RETRIES = 100


@dataclass(frozen=True)
class Panel:
    """T x n returns panel with a missing mask and a train/test/oos split.

    Parameters
    ----------
    values : array, shape (T, n)
        Returns. Masked cells hold NaN.
    mask : array of bool, shape (T, n), optional
        True marks a missing cell. Defaults to ``isnan(values)``.
    split : (int, int, int)
        Lengths of the training, testing and out-of-sample testing blocks.
    assets, index : sequence of str, optional
        Column names and row labels (used by the CSV round trip).
    """

    values: NDArray
    split: tuple
    mask: NDArray = None
    assets: tuple = None
    index: tuple = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise DataError(f"panel values must be 2-D, got shape {values.shape}")
        T, n = values.shape
        mask = np.isnan(values) if self.mask is None else np.array(self.mask, dtype=bool, copy=True)
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} does not match values {values.shape}")
        split = tuple(int(s) for s in self.split)
        if len(split) != 3 or min(split) <= 0 or sum(split) != T:
            raise DataError(f"split {split} must be three positive lengths summing to T={T}")
        if np.any(mask[split[0]:]):
            r, c = np.argwhere(mask[split[0]:])[0]
            raise DataError(f"missing cell at row {r + split[0]}, column {c} outside the training rows")
        if np.any(~np.isfinite(values[~mask])):
            r, c = np.argwhere(~np.isfinite(values) & ~mask)[0]
            raise DataError(f"non-finite observed value at row {r}, column {c}")
        values[mask] = np.nan
        assets = tuple(f"asset_{j}" for j in range(n)) if self.assets is None else tuple(self.assets)
        if len(assets) != n:
            raise DataError(f"{len(assets)} asset names for {n} columns")
        if len(set(assets)) != n:
            raise DataError("duplicate asset names")
        index = tuple(str(t) for t in range(T)) if self.index is None else tuple(str(i) for i in self.index)
        if len(index) != T:
            raise DataError(f"{len(index)} row labels for {T} rows")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "index", index)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    @property
    def n_train(self) -> int:
        return self.split[0]

    @property
    def n_test(self) -> int:
        return self.split[1]

    @property
    def n_oos(self) -> int:
        return self.split[2]

    @property
    def train_rows(self) -> slice:
        return slice(0, self.split[0])

    @property
    def test_rows(self) -> slice:
        return slice(self.split[0], self.split[0] + self.split[1])

    @property
    def oos_rows(self) -> slice:
        return slice(self.split[0] + self.split[1], None)

    def replace(self, values=None, mask=None) -> "Panel":
        return Panel(
            self.values if values is None else values,
            self.split,
            mask=self.mask if mask is None else mask,
            assets=self.assets,
            index=self.index,
        )

    def check_observability(self, rows: int | None = None):
        """Raise :class:`ObservabilityError` if some column is fully missing in ``[0, rows)``."""
        rows = self.n_train if rows is None else rows
        seen = (~self.mask[:rows]).any(axis=0)
        if not seen.all():
            j = int(np.flatnonzero(~seen)[0])
            raise ObservabilityError(j, rows, self.assets[j])


# -- missing mechanisms -------------------------------------------------------


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class MCAR:
    """Each training cell is missing independently with probability ``p``."""

    p: float = 0.5

    def __post_init__(self):
        _check_prob("p", self.p)

    def draw(self, values, rng):
        return rng.random(values.shape) < self.p


@dataclass(frozen=True)
class MAR:
    """Per-asset missing rate chosen by a Bernoulli selector.

    With probability ``selector_p`` an asset's cells go missing at rate
    ``p_low``; otherwise at rate ``p_high``.
    """

    p_low: float = 0.5
    p_high: float = 0.7
    selector_p: float = 0.5

    def __post_init__(self):
        for name in ("p_low", "p_high", "selector_p"):
            _check_prob(name, getattr(self, name))

    def draw(self, values, rng):
        selected = rng.random(values.shape[1]) < self.selector_p
        rate = np.where(selected, self.p_low, self.p_high)
        return rng.random(values.shape) < rate


@dataclass(frozen=True)
class BlockMissing:
    """All assets missing over the first ``floor(fraction * T_train)`` rows."""

    fraction: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction}")

    def draw(self, values, rng):
        m = np.zeros(values.shape, dtype=bool)
        m[: math.floor(self.fraction * values.shape[0])] = True
        return m


@dataclass(frozen=True)
class MissingByValue:
    """Cells whose absolute value exceeds ``threshold`` are missing."""

    threshold: float = 0.3

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")

    def draw(self, values, rng):
        return np.abs(values) > self.threshold


MissingMechanism = Union[MCAR, MAR, BlockMissing, MissingByValue]
_RANDOM_MECHANISMS = (MCAR, MAR)


def apply_mask(panel: Panel, mech: MissingMechanism, seed=None) -> Panel:
    """Mask training cells of a fully observed panel according to ``mech``.

    Random mechanisms are redrawn (up to 100 times) while some asset is
    fully missing over the training rows; if that still fails, one
    uniformly chosen cell of each such asset is unmasked. Deterministic
    mechanisms that leave an asset unobserved raise
    :class:`ObservabilityError`.
    """
    if panel.mask[: panel.n_train].any():
        raise DataError("apply_mask expects a panel fully observed in the training rows")
    rng = as_rng(seed)
    train = panel.values[: panel.n_train]
    random_mech = isinstance(mech, _RANDOM_MECHANISMS)
    for _ in range(MAX_MASK_RETRIES if random_mech else 1):
        m = mech.draw(train, rng)
        if not m.all(axis=0).any():
            break
    bad = np.flatnonzero(m.all(axis=0))
    if bad.size:
        if not random_mech:
            j = int(bad[0])
            raise ObservabilityError(j, panel.n_train, panel.assets[j])
        for j in bad:
            m[rng.integers(panel.n_train), j] = False
    full = np.zeros(panel.shape, dtype=bool)
    full[: panel.n_train] = m
    return panel.replace(mask=full)


# -- simulation ------------------------------------------------------------------


def factor_model_parameters(n: int) -> tuple[NDArray, NDArray]:
    """Mean ``theta`` and covariance ``Omega`` of the one-factor simulation model.

    ``theta_i = 0.2 * beta_i + alpha_i`` with unit betas and alphas
    equispaced on [-0.3, 0.3]; ``Omega = beta beta^T + I``.
    """
    if n < 2:
        raise ValueError(f"need at least 2 assets, got {n}")
    beta = np.ones(n)
    alpha = np.linspace(-0.3, 0.3, n)
    return 0.2 * beta + alpha, np.outer(beta, beta) + np.eye(n)


def simulate_factor_panel(n: int, splits: Sequence[int], seed=None) -> Panel:
    """Draw a fully observed panel with i.i.d. ``N(theta, Omega)`` rows."""
    theta, omega = factor_model_parameters(n)
    T = int(sum(splits))
    rng = as_rng(seed)
    L = np.linalg.cholesky(omega)
    Z = theta + rng.standard_normal((T, n)) @ L.T
    return Panel(Z, tuple(splits))


def ridge_covariance(values: ArrayLike) -> NDArray:
    """Sample covariance (``ddof=1``) of the rows of ``values``, ridged if singular.

    The ridge is ``eps * I`` with ``eps = 1e-8 * mean(diag)`` (``1e-8`` when
    the diagonal is all zero).
    """
    values = np.asarray(values, float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DataError(f"need at least 2 complete rows to estimate a covariance, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DataError("covariance estimate needs complete rows")
    S = np.atleast_2d(np.cov(values, rowvar=False))
    S = 0.5 * (S + S.T)
    scale = float(np.mean(np.diag(S)))
    eps = 1e-8 * scale if scale > 0 else 1e-8
    if np.linalg.eigvalsh(S)[0] <= 1e-12 * max(scale, 0.0):
        S = S + eps * np.eye(S.shape[0])
    return S


def estimate_omega(panel: Panel, rows: str = "all") -> NDArray:
    """Noise covariance estimate from a panel.

    ``rows="all"`` needs a complete panel. ``rows="complete"`` uses the
    fully observed rows of the training and testing blocks, which is what
    is available after masking (test rows are always observed).
    """
    if rows == "all":
        if panel.mask.any():
            raise DataError("estimate_omega(rows='all') needs the complete (pre-masking) panel")
        return ridge_covariance(panel.values)
    if rows == "complete":
        end = panel.n_train + panel.n_test
        keep = ~panel.mask[:end].any(axis=1)
        return ridge_covariance(panel.values[:end][keep])
    raise ValueError(f"rows must be 'all' or 'complete', got {rows!r}")


# -- CSV -----------------------------------------------------------------------------


def _parse_cell(tok: str, row: int, col: int, name: str) -> float:
    tok = tok.strip()
    if tok in MISSING_TOKENS:
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise DataError(
            f"non-numeric cell {tok!r} at data row {row}, column {col} ({name})"
        ) from None


def read_csv(path, splits: Sequence[int], layout: str = "time", scale: float = 1.0) -> Panel:
    """Read a panel from CSV.

    The header holds asset names after a leading label column; each data
    row starts with a date or index label. Empty cells and ``NaN`` are
    missing. With ``layout="asset"`` the file is asset-major (one row
    per asset, time along columns) and is transposed on read. ``scale``
    multiplies every value, e.g. 252 to annualize daily returns.
    """
    if layout not in ("time", "asset"):
        raise ValueError(f"layout must be 'time' or 'asset', got {layout!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    cols = header[1:]
    if len(set(cols)) != len(cols):
        dup = next(c for c in cols if cols.count(c) > 1)
        raise DataError(f"{path}: duplicate column name {dup!r}")
    labels, data = [], []
    for i, r in enumerate(rows[1:], start=1):
        if len(r) != len(header):
            raise DataError(f"{path}: data row {i} has {len(r)} fields, header has {len(header)}")
        labels.append(r[0].strip())
        data.append([_parse_cell(tok, i, j + 1, cols[j]) for j, tok in enumerate(r[1:])])
    values = np.array(data, dtype=float) * scale
    if layout == "time":
        assets, index = cols, labels
    else:
        values, assets, index = values.T, labels, cols
    return Panel(values, tuple(splits), assets=assets, index=index)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_csv(panel: Panel, path, label: str = "date"):
    """Write a panel as time-major CSV; missing cells are written empty."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, *panel.assets])
        for lab, row in zip(panel.index, panel.values):
            w.writerow([lab, *(_fmt(x) for x in row)])


def write_mask_csv(panel: Panel, path, label: str = "date"):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, *panel.assets])
        for lab, row in zip(panel.index, panel.mask):
            w.writerow([lab, *(str(int(b)) for b in row)])


def read_mask_csv(path) -> NDArray:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    out = []
    for i, r in enumerate(rows[1:], start=1):
        if any(tok.strip() not in ("0", "1") for tok in r[1:]):
            raise DataError(f"{path}: mask row {i} contains a value other than 0/1")
        out.append([tok.strip() == "1" for tok in r[1:]])
    return np.array(out, dtype=bool)


def panel_with_mask(panel: Panel, mask: ArrayLike) -> Panel:
    """Apply an explicit boolean mask (e.g. read from a mask CSV)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != panel.shape:
        raise DataError(f"mask shape {mask.shape} does not match panel {panel.shape}")
    return panel.replace(mask=mask | panel.mask)
