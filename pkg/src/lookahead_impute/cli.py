"""Command line entry point.

``lookahead-impute sweep`` runs the whole simulation study; the other
subcommands run one stage for one data set and exchange files in the
output directory::

    simulate   -> truth_<s>.csv
    mask       -> masked_<s>.csv, mask_<s>.csv
    posteriors -> posteriors_<s>.json
    solve      -> solution_<s>_<mechanism>_<g>.json
    impute     -> imputed_<s>_<mechanism>_<g>_<i>.csv
    evaluate   -> regrets_<s>_<mechanism>_<g>.csv
    report     -> plot_<mechanism>.csv from report.json

Exit codes: 0 success, 1 configuration error, 2 data error (including a
missing upstream file), 3 too many solver failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, load
from .consensus import ConsensusSolution
from .evaluation import EvalReport
from .exceptions import ConfigError, DataError, LookAheadImputeError
from .experiment import (
    masked_panel,
    noise_covariance,
    posteriors,
    run_sweep,
    score,
    solve_cell,
    tolerance_grid,
    truth_panel,
    load_source,
)
from .panel import Panel, panel_with_mask, read_csv, read_mask_csv, write_csv, write_mask_csv
from .posterior import PosteriorSet
from .sampler import impute
from .seeding import IMPUTE, child_seed

OUTPUT_ENV = "LOOKAHEAD_IMPUTE_OUTPUT"
DEFAULT_OUTPUT = "lookahead_output"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("lookahead_impute")


class MissingArtifact(DataError):
    def __init__(self, path, stage):
        self.path = str(path)
        self.stage = stage
        super().__init__(f"missing {path}; run the '{stage}' stage first")


class SolverBudgetExceeded(LookAheadImputeError):
    pass


# -- helpers ------------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "full", False):
        changes["simulations"] = 500
    if getattr(args, "simulations", None) is not None:
        changes["simulations"] = args.simulations
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.output or cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_panel(cfg, path, stage) -> Panel:
    return read_csv(_need(path, stage), cfg.splits)


def _masked(cfg, out, s) -> Panel:
    panel = _read_panel(cfg, out / f"masked_{s}.csv", "mask")
    mask = read_mask_csv(_need(out / f"mask_{s}.csv", "mask"))
    return panel_with_mask(panel, mask)


def _cell_name(s, mech, g):
    return f"{s}_{mech}_{g}"


# -- stage commands -----------------------------------------------------------------


def cmd_simulate(args, cfg, out):
    truth = truth_panel(cfg, args.sim, load_source(cfg))
    write_csv(truth, out / f"truth_{args.sim}.csv")
    return {"written": [f"truth_{args.sim}.csv"]}


def cmd_mask(args, cfg, out):
    truth = _read_panel(cfg, out / f"truth_{args.sim}.csv", "simulate")
    masked = masked_panel(cfg, truth, args.sim)
    write_csv(masked, out / f"masked_{args.sim}.csv")
    write_mask_csv(masked, out / f"mask_{args.sim}.csv")
    return {"written": [f"masked_{args.sim}.csv", f"mask_{args.sim}.csv"],
            "missing_cells": int(masked.mask.sum())}


def cmd_posteriors(args, cfg, out):
    masked = _masked(cfg, out, args.sim)
    pset = posteriors(cfg, masked, noise_covariance(cfg, masked))
    _write_json(out / f"posteriors_{args.sim}.json", pset.to_dict())
    return {"written": [f"posteriors_{args.sim}.json"], "K": pset.K}


def _load_pset(out, s) -> PosteriorSet:
    path = _need(out / f"posteriors_{s}.json", "posteriors")
    return PosteriorSet.from_dict(json.loads(path.read_text()))


def cmd_solve(args, cfg, out):
    pset = _load_pset(out, args.sim)
    bias, dmax, grid = tolerance_grid(cfg, args.mechanism, pset)
    if args.delta is not None:
        delta, g = float(args.delta), "custom"
    else:
        if not 0 <= args.delta_index < grid.size:
            raise ConfigError(f"--delta-index must lie in [0, {grid.size - 1}]")
        delta, g = float(grid[args.delta_index]), args.delta_index
    sol = solve_cell(cfg, pset, args.mechanism, delta, bias)
    name = f"solution_{_cell_name(args.sim, args.mechanism, g)}.json"
    _write_json(out / name, {"delta_max": dmax, **sol.to_dict()})
    return {"written": [name], "status": sol.status, "weights": sol.weights.tolist(),
            "bias_attained": sol.bias_attained}


def _solution_path(out, args):
    g = "custom" if args.delta is not None else args.delta_index
    return _need(out / f"solution_{_cell_name(args.sim, args.mechanism, g)}.json", "solve"), g


def cmd_impute(args, cfg, out):
    masked = _masked(cfg, out, args.sim)
    path, g = _solution_path(out, args)
    sol = ConsensusSolution.from_dict(json.loads(path.read_text()))
    omega = noise_covariance(cfg, masked)
    panels = impute(masked, sol.aggregated, omega, cfg.mode, cfg.imputations,
                    seed=child_seed(cfg.seed, IMPUTE, args.sim))
    names = []
    for i, p in enumerate(panels):
        names.append(f"imputed_{_cell_name(args.sim, args.mechanism, g)}_{i}.csv")
        write_csv(p, out / names[-1])
    return {"written": names}


def cmd_evaluate(args, cfg, out):
    truth = _read_panel(cfg, out / f"truth_{args.sim}.csv", "simulate")
    _, g = _solution_path(out, args)
    stem = _cell_name(args.sim, args.mechanism, g)
    completed = [_read_panel(cfg, out / f"imputed_{stem}_{i}.csv", "impute") for i in range(cfg.imputations)]
    regrets = score(cfg, truth, completed)
    name = f"regrets_{stem}.csv"
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["imputation", "regret"])
        for i, r in enumerate(regrets):
            w.writerow([i, repr(float(r))])
    return {"written": [name], "mean_regret": float(regrets.mean())}


# -- sweep and report ---------------------------------------------------------------


def _write_regrets(path, cfg, sims):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["simulation", "mechanism", "delta_index", "delta", "status", "imputation", "regret"])
        for r in sims:
            for a, mech in enumerate(cfg.mechanisms):
                for g in range(cfg.delta_grid_size):
                    for i in range(cfg.imputations):
                        w.writerow([r.index, mech, g, repr(float(r.deltas[a, g])), r.status[a, g], i,
                                    repr(float(r.regrets[a, g, i]))])


def _write_plot_long(path, report: EvalReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mechanism", "delta_index", "delta_frac", "measure", "value", "se"])
        for c in report.cells:
            for measure in ("ecmse", "ecbias2", "ecvar"):
                w.writerow([c.mechanism, c.delta_index, repr(c.delta_frac), measure,
                            repr(float(getattr(c, measure))), repr(float(getattr(c, "se_" + measure)))])


def _write_manifest(out: Path, cfg: ExperimentConfig, files):
    manifest = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"lookahead_impute": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "files": {name: _sha256(out / name) for name in files},
    }
    _write_json(out / "manifest.json", manifest)


def cmd_sweep(args, cfg, out):
    res = run_sweep(cfg, jobs=args.jobs)
    report = res.report
    (out / "config.yaml").write_text(cfg.replace(output_dir=None).to_yaml())
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    _write_plot_long(out / "plot_data.csv", report)
    _write_regrets(out / "regrets.csv", cfg, res.simulations)
    solutions = [sol for r in res.simulations for sol in r.solutions]
    _write_json(out / "solutions.json", solutions)
    notes = [m for r in res.simulations for m in r.messages]
    _write_json(out / "failures.json", {"failure_rate": res.failure_rate, "messages": notes})
    files = ["config.yaml", "report.csv", "report.json", "plot_data.csv", "regrets.csv",
             "solutions.json", "failures.json"]
    _write_manifest(out, cfg, files)
    summary = {"output": str(out), "optimum": report.optimum, "failure_rate": res.failure_rate}
    if res.failure_rate > cfg.failure_budget:
        raise SolverBudgetExceeded(
            f"solver failure rate {res.failure_rate:.3f} exceeds the budget {cfg.failure_budget:.3f}"
        )
    return summary


def cmd_report(args, cfg, out):
    report = EvalReport.read_json(_need(out / "report.json", "sweep"))
    names = []
    cols = ["delta_index", "delta_frac", "delta_mean", "ecmse", "se_ecmse", "ecbias2", "se_ecbias2",
            "ecvar", "se_ecvar", "completed", "fallback", "failed"]
    for mech in report.mechanisms:
        names.append(f"plot_{mech}.csv")
        with open(out / names[-1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for c in sorted((c for c in report.cells if c.mechanism == mech), key=lambda c: c.delta_index):
                w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(c, k) for k in cols)])
    return {"written": names, "optimum": report.optimum}


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lookahead-impute",
                                description="Consensus-posterior imputation with controlled look-ahead bias.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults to the built-in MCAR study)")
        sp.add_argument("--output", help=f"output directory (else config output_dir, ${OUTPUT_ENV}, ./{DEFAULT_OUTPUT})")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("-v", "--verbose", action="store_true")

    def stage(sp):
        common(sp)
        sp.add_argument("--sim", type=int, default=0, help="data set index (default 0)")

    def cell(sp):
        stage(sp)
        sp.add_argument("--mechanism", required=True,
                        choices=["forward_kl", "wasserstein", "restricted_wasserstein", "backward_kl"])
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--delta-index", type=int, help="grid point 0..G-1")
        g.add_argument("--delta", type=float, help="explicit tolerance")

    stage(sub.add_parser("simulate", help="write the complete panel of one data set"))
    stage(sub.add_parser("mask", help="apply the missing mechanism"))
    stage(sub.add_parser("posteriors", help="truncated posteriors projected on a shared basis"))
    cell(sub.add_parser("solve", help="optimal consensus weights at one tolerance"))
    cell(sub.add_parser("impute", help="draw the configured number of completed panels"))
    cell(sub.add_parser("evaluate", help="portfolio regrets of the completed panels"))
    sw = sub.add_parser("sweep", help="run the full study and write the report")
    common(sw)
    sw.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    sw.add_argument("--simulations", type=int, help="override the number of data sets")
    sw.add_argument("--full", action="store_true", help="use 500 data sets")
    common(sub.add_parser("report", help="per-mechanism plot series from report.json"))
    return p


COMMANDS = {
    "simulate": cmd_simulate, "mask": cmd_mask, "posteriors": cmd_posteriors, "solve": cmd_solve,
    "impute": cmd_impute, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "report": cmd_report,
}


def _error_record(kind, exc, code):
    return {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = _config(args)
        out = _output_dir(args, cfg)
        result = COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        code, record = EXIT_CONFIG, _error_record("config", exc, EXIT_CONFIG)
    except SolverBudgetExceeded as exc:
        code, record = EXIT_SOLVER, _error_record("solver_budget", exc, EXIT_SOLVER)
    except (LookAheadImputeError, OSError) as exc:
        code, record = EXIT_DATA, _error_record("data", exc, EXIT_DATA)
    else:
        print(json.dumps(result, sort_keys=True))
        return EXIT_OK
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        _write_json(out / "error.json", record)
    return code


if __name__ == "__main__":
    sys.exit(main())
