"""The simulation study: mask, aggregate, impute and score, over many data sets.

Each data set ``s`` runs the same pipeline::

    truth panel -> masked panel -> K truncated posteriors
      -> for each mechanism and tolerance: consensus posterior
      -> m imputations -> portfolio regrets

All randomness is keyed by ``(seed, stage, s, ...)``, so data sets can run
in any order or in parallel with identical results. Imputation streams
depend on ``(s, i)`` only: every mechanism and tolerance sees the same
standard-normal draws, which makes the curves over the tolerance grid
much smoother than independent draws would.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .consensus import FORWARD_KL, VTransformedL1Ball, delta_grid, delta_max, solve
from .consensus.solvers import BACKWARD_KL, FALLBACK
from .evaluation import EvalReport, portfolio_weights, regret, summarize
from .exceptions import LookAheadImputeError
from .panel import Panel, apply_mask, estimate_omega, factor_model_parameters, read_csv, simulate_factor_panel
from .posterior import PosteriorSet, generate_posteriors, make_schedule, project_to_basis
from .sampler import ImputationPlan, impute
from .seeding import BOOTSTRAP, IMPUTE, MASK, SIMULATE, child_seed

log = logging.getLogger(__name__)

FAILED = "failed"


def load_source(config: ExperimentConfig) -> Optional[Panel]:
    """The CSV panel, or None for simulated data."""
    if config.source == "csv":
        return read_csv(config.csv_path, config.splits, layout=config.csv_layout, scale=config.csv_scale)
    return None


def truth_panel(config: ExperimentConfig, s: int, source: Optional[Panel] = None) -> Panel:
    if config.source == "simulate":
        return simulate_factor_panel(config.n, config.splits, seed=child_seed(config.seed, SIMULATE, s))
    return source


def masked_panel(config: ExperimentConfig, truth: Panel, s: int) -> Panel:
    mech = config.missing_mechanism()
    if mech is None:
        return truth
    return apply_mask(truth, mech, seed=child_seed(config.seed, MASK, s))


def noise_covariance(config: ExperimentConfig, masked: Panel) -> np.ndarray:
    if config.omega == "truth":
        return factor_model_parameters(masked.n_assets)[1]
    return estimate_omega(masked, rows="complete")


def posteriors(config: ExperimentConfig, masked: Panel, omega) -> PosteriorSet:
    schedule = make_schedule(config.K, masked.n_train, masked.n_test)
    return project_to_basis(generate_posteriors(masked, omega, schedule, config.gaussian_prior()), FORWARD_KL)


def bias_for(config: ExperimentConfig, mechanism: str, pset: PosteriorSet):
    if mechanism == FORWARD_KL:
        return VTransformedL1Ball(pset.basis.V)
    return config.bias(pset.dim)


def tolerance_grid(config: ExperimentConfig, mechanism: str, pset: PosteriorSet):
    bias = bias_for(config, mechanism, pset)
    dmax = delta_max(pset, mechanism, bias)
    return bias, dmax, delta_grid(dmax, config.delta_grid_size)


def solve_cell(config: ExperimentConfig, pset: PosteriorSet, mechanism: str, delta: float, bias=None):
    if bias is None:
        bias = bias_for(config, mechanism, pset)
    kwargs = {"restarts": config.backward_kl_restarts, "seed": config.seed} if mechanism == BACKWARD_KL else {}
    return solve(mechanism, pset, bias, float(delta), **kwargs)


def score(config: ExperimentConfig, truth: Panel, completed) -> np.ndarray:
    """Annualized regrets of the completed panels."""
    f = config.annualization_factor()
    return np.array([f * regret(truth, portfolio_weights(p)) for p in completed])


@dataclass
class SimulationResult:
    index: int
    regrets: np.ndarray        # (M, G, m)
    status: np.ndarray         # (M, G)
    deltas: np.ndarray         # (M, G)
    delta_max: np.ndarray      # (M,)
    weights: list              # M lists of G weight vectors
    solutions: list = field(default_factory=list)   # serialized solutions, kept for the first data sets
    messages: list = field(default_factory=list)


def run_simulation(config: ExperimentConfig, s: int, source: Optional[Panel] = None) -> SimulationResult:
    truth = truth_panel(config, s, source)
    masked = masked_panel(config, truth, s)
    omega = noise_covariance(config, masked)
    pset = posteriors(config, masked, omega)
    plan = ImputationPlan(masked, omega)
    M, G, m = len(config.mechanisms), config.delta_grid_size, config.imputations
    regrets = np.full((M, G, m), np.nan)
    status = np.empty((M, G), dtype=object)
    deltas = np.zeros((M, G))
    dmaxes = np.zeros(M)
    weights, solutions, messages = [], [], []
    keep = s < config.save_solutions
    for a, mech in enumerate(config.mechanisms):
        bias, dmax, grid = tolerance_grid(config, mech, pset)
        dmaxes[a] = dmax
        deltas[a] = grid
        wrow = []
        for g, delta in enumerate(grid):
            sol = solve_cell(config, pset, mech, delta, bias)
            status[a, g] = sol.status
            wrow.append(sol.weights.tolist())
            if keep:
                solutions.append({"simulation": s, "delta_index": g, **sol.to_dict()})
            if sol.status == FALLBACK:
                messages.append(f"simulation {s}, {mech}, delta index {g}: {sol.message}")
                continue
            try:
                completed = impute(masked, sol.aggregated, omega, config.mode, m,
                                   seed=child_seed(config.seed, IMPUTE, s), plan=plan)
                regrets[a, g] = score(config, truth, completed)
            except LookAheadImputeError as exc:
                status[a, g] = FAILED
                messages.append(f"simulation {s}, {mech}, delta index {g}: {exc}")
        weights.append(wrow)
    return SimulationResult(s, regrets, status.astype(str), deltas, dmaxes, weights, solutions, messages)


def _worker(args):
    config, s, source = args
    return run_simulation(config, s, source)


@dataclass
class SweepResult:
    config: ExperimentConfig
    report: EvalReport
    simulations: list

    @property
    def failure_rate(self) -> float:
        st = np.array([r.status for r in self.simulations])
        return float(np.isin(st, [FALLBACK, FAILED]).mean()) if st.size else 0.0


def run_sweep(config: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """All data sets of the study, optionally on ``jobs`` worker processes.

    Results are collected by data-set index, so the output does not depend
    on ``jobs``.
    """
    source = load_source(config)
    tasks = [(config, s, source) for s in range(config.simulations)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            sims = list(ex.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        sims = [_worker(t) for t in tasks]
    sims.sort(key=lambda r: r.index)
    return SweepResult(config, report_from(config, sims), sims)


def report_from(config: ExperimentConfig, sims: list) -> EvalReport:
    regrets = np.stack([r.regrets for r in sims])
    status = np.stack([r.status for r in sims])
    deltas = np.stack([r.deltas for r in sims])
    meta = {
        "config_digest": config.digest(),
        "seed": config.seed,
        "simulations": config.simulations,
        "imputations": config.imputations,
        "mode": config.mode,
        "K": config.K,
        "annualization": config.annualization_factor(),
        "bootstrap_resamples": config.bootstrap_resamples,
    }
    return summarize(config.mechanisms, regrets, status, deltas, n_boot=config.bootstrap_resamples,
                     seed=child_seed(config.seed, BOOTSTRAP), meta=meta)


def ecmse_sweep(config: ExperimentConfig, jobs: int = 1) -> EvalReport:
    """ECMSE / ECBias^2 / ECVar curves for every configured mechanism."""
    return run_sweep(config, jobs).report
