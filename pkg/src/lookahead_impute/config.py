"""Experiment configuration: a YAML file checked against a fixed schema.

Unknown keys, wrong types and out-of-range values are errors that name
the offending field and its line in the file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .consensus.bias import bias_set_from_dict
from .consensus.solvers import MECHANISMS
from .exceptions import ConfigError
from .panel import MAR, MCAR, BlockMissing, MissingByValue
from .posterior import GaussianPrior
from .sampler import MODES

MISSING_KINDS = {
    "mcar": (MCAR, {"p"}),
    "mar": (MAR, {"p_low", "p_high", "selector_p"}),
    "block": (BlockMissing, {"fraction"}),
    "by_value": (MissingByValue, {"threshold"}),
    "none": (None, set()),
}
BIAS_KINDS = {"euclidean_ball": set(), "singleton_1n": set(), "polyhedron": {"A", "b"}, "box": {"radius"}}


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of one ECMSE sweep.

    The defaults reproduce the MCAR simulation design (10 assets, splits
    100/100/1000, half the training cells missing) with 100 data sets.
    """

    source: str = "simulate"               # simulate | csv
    csv_path: Optional[str] = None
    csv_layout: str = "time"               # time: rows are periods; asset: rows are assets
    csv_scale: float = 1.0
    n: int = 10
    splits: tuple = (100, 100, 1000)
    missing: dict = field(default_factory=lambda: {"kind": "mcar", "p": 0.5})
    omega: str = "truth"                   # truth | sample
    prior: dict = field(default_factory=lambda: {"kind": "flat"})
    K: int = 5
    mechanisms: tuple = ("forward_kl", "wasserstein", "restricted_wasserstein")
    bias_set: dict = field(default_factory=lambda: {"kind": "euclidean_ball"})
    delta_grid_size: int = 10
    simulations: int = 100
    imputations: int = 10
    mode: str = "cond_expect"
    seed: int = 20240501
    annualization: Optional[float] = None  # default: 1 for simulate, 252 for csv
    bootstrap_resamples: int = 1000
    backward_kl_restarts: int = 32
    failure_budget: float = 0.05
    save_solutions: int = 2
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(int(s) for s in self.splits))
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        self.validate()

    # -- validation -------------------------------------------------------------

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.source not in ("simulate", "csv"):
            bad("source", f"must be 'simulate' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            bad("csv_path", "required when source is 'csv'")
        if self.csv_layout not in ("time", "asset"):
            bad("csv_layout", f"must be 'time' or 'asset', got {self.csv_layout!r}")
        if not self.csv_scale > 0:
            bad("csv_scale", "must be positive")
        if self.source == "simulate" and self.n < 2:
            bad("n", "need at least 2 assets")
        if len(self.splits) != 3 or min(self.splits) <= 0:
            bad("splits", f"need three positive lengths, got {list(self.splits)}")
        self.missing_mechanism()
        if self.omega not in ("truth", "sample"):
            bad("omega", f"must be 'truth' or 'sample', got {self.omega!r}")
        if self.omega == "truth" and self.source != "simulate":
            bad("omega", "'truth' is only available for simulated data")
        self.gaussian_prior()
        if self.K < 2:
            bad("K", "need at least 2 truncation times")
        if self.K > self.splits[1] + 1:
            bad("K", f"at most T_test + 1 = {self.splits[1] + 1} distinct truncation times")
        if not self.mechanisms:
            bad("mechanisms", "need at least one mechanism")
        for mech in self.mechanisms:
            if mech not in MECHANISMS:
                bad("mechanisms", f"unknown mechanism {mech!r}; choose from {list(MECHANISMS)}")
        if len(set(self.mechanisms)) != len(self.mechanisms):
            bad("mechanisms", "duplicate entries")
        kind = self.bias_set.get("kind") if isinstance(self.bias_set, dict) else None
        if kind not in BIAS_KINDS:
            bad("bias_set", f"kind must be one of {sorted(BIAS_KINDS)}")
        extra = set(self.bias_set) - {"kind"} - BIAS_KINDS[kind]
        if extra:
            bad("bias_set", f"unknown keys {sorted(extra)} for kind {kind!r}")
        if self.delta_grid_size < 2:
            bad("delta_grid_size", "need at least 2 grid points")
        if self.simulations < 1:
            bad("simulations", "must be at least 1")
        if self.imputations < 1:
            bad("imputations", "must be at least 1")
        if self.mode not in MODES:
            bad("mode", f"must be one of {list(MODES)}, got {self.mode!r}")
        if self.seed < 0:
            bad("seed", "must be nonnegative")
        if self.annualization is not None and not self.annualization > 0:
            bad("annualization", "must be positive")
        if self.bootstrap_resamples < 2:
            bad("bootstrap_resamples", "need at least 2 resamples")
        if self.backward_kl_restarts < 0:
            bad("backward_kl_restarts", "must be nonnegative")
        if not 0.0 <= self.failure_budget <= 1.0:
            bad("failure_budget", "must lie in [0, 1]")
        if self.save_solutions < 0:
            bad("save_solutions", "must be nonnegative")

    # -- derived objects --------------------------------------------------------

    def missing_mechanism(self):
        d = dict(self.missing) if isinstance(self.missing, dict) else {}
        kind = d.pop("kind", None)
        if kind not in MISSING_KINDS:
            raise ConfigError(f"missing: kind must be one of {sorted(MISSING_KINDS)}, got {kind!r}")
        cls, allowed = MISSING_KINDS[kind]
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"missing: unknown keys {sorted(extra)} for kind {kind!r}")
        if cls is None:
            return None
        try:
            return cls(**{k: float(v) for k, v in d.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"missing: {exc}") from None

    def gaussian_prior(self) -> Optional[GaussianPrior]:
        d = dict(self.prior) if isinstance(self.prior, dict) else {}
        kind = d.pop("kind", None)
        if kind == "flat":
            if d:
                raise ConfigError(f"prior: unknown keys {sorted(d)} for a flat prior")
            return None
        if kind == "gaussian":
            if set(d) != {"mean", "cov"}:
                raise ConfigError("prior: a gaussian prior needs exactly 'mean' and 'cov'")
            try:
                return GaussianPrior(np.asarray(d["mean"], float), np.asarray(d["cov"], float))
            except Exception as exc:  # noqa: BLE001
                raise ConfigError(f"prior: {exc}") from None
        raise ConfigError(f"prior: kind must be 'flat' or 'gaussian', got {kind!r}")

    def bias(self, n: int):
        try:
            return bias_set_from_dict(self.bias_set, n=n)
        except Exception as exc:  # noqa: BLE001
            raise ConfigError(f"bias_set: {exc}") from None

    def annualization_factor(self) -> float:
        if self.annualization is not None:
            return float(self.annualization)
        return 252.0 if self.source == "csv" else 1.0

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["splits"] = list(self.splits)
        d["mechanisms"] = list(self.mechanisms)
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        """Hash of the settings that determine the results (the output directory is excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_TYPES = {
    "source": str, "csv_path": (str, type(None)), "csv_layout": str, "csv_scale": (int, float),
    "n": int, "splits": list, "missing": dict, "omega": str, "prior": dict, "K": int,
    "mechanisms": list, "bias_set": dict, "delta_grid_size": int, "simulations": int,
    "imputations": int, "mode": str, "seed": int, "annualization": (int, float, type(None)),
    "bootstrap_resamples": int, "backward_kl_restarts": int, "failure_budget": (int, float),
    "save_solutions": int, "output_dir": (str, type(None)),
}


def _key_lines(text: str) -> dict:
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a YAML config."""
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of keys to values")

    def where(key):
        return f"{source}:{lines[key]}" if key in lines else source

    for key, value in data.items():
        if key not in _TYPES:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
        expected = _TYPES[key]
        if isinstance(value, bool) or not isinstance(value, expected):
            names = expected.__name__ if isinstance(expected, type) else "/".join(t.__name__ for t in expected)
            raise ConfigError(f"{where(key)}: {key} must be of type {names}, got {type(value).__name__}")
    try:
        return ExperimentConfig(**data)
    except ConfigError as exc:
        field_name = str(exc).split(":", 1)[0]
        raise ConfigError(f"{where(field_name)}: {exc}") from None


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, str(path))
