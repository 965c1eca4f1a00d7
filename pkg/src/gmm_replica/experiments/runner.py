"""Grid campaigns: one replica solve per cell plus Monte-Carlo replicates.

A cell is fully determined by the config and its indices, so cells may run
in any order or in parallel; results are always sorted by cell key before
anything is written.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm
from scipy.stats import t as student_t

from ..classifier import fit
from ..covariance import factorize
from ..gmm_data import MixtureDesign, sample_dataset
from ..inference import debias, empirical_precision, infer, replicate_power
from ..losses import get_loss
from ..replica import (
    OrderParameters,
    ReplicaError,
    debiased_mean,
    debiased_sd,
    solve_fixed_point,
    theoretical_power,
    theoretical_precision,
)
from .config import Cell, ExperimentConfig

logger = logging.getLogger(__name__)

CI_LEVEL = 0.95


@dataclass
class ReplicateResult:
    rep: int
    precision: float
    coverage: float
    power: float
    fit_converged: bool
    null_z: np.ndarray = field(repr=False)
    nonzero_rejected: int = 0


@dataclass
class CellResult:
    cell: Cell
    status: str
    params: OrderParameters | None = None
    iterations: int = 0
    theo_precision: float = float("nan")
    theo_power: float = float("nan")
    n_nonzero: int = 0
    replicates: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.replicates])


def build_design(config: ExperimentConfig, cell: Cell) -> MixtureDesign:
    factors = factorize(config.covariance_model(cell.structure))
    rng = np.random.default_rng(config.design_seed(cell))
    return MixtureDesign.build(
        factors, alpha=config.alpha, sparsity=cell.sparsity, mu_norm=config.mu_norm,
        lam=float(np.exp(cell.log_lambda)), rng=rng,
    )


def solve_cell(config: ExperimentConfig, cell: Cell, design: MixtureDesign | None = None):
    design = design or build_design(config, cell)
    options = replace(config.solver, seed=config.solver_seed(cell), threads=1)
    return design, *solve_fixed_point(design, config.loss, options)


def run_replicate(config, cell, design, params, rep: int) -> ReplicateResult:
    loss = get_loss(config.loss)
    train = sample_dataset(design, np.random.default_rng(config.train_seed(cell, rep)))
    test = sample_dataset(design, np.random.default_rng(config.test_seed(cell, rep)), n=config.n_test)
    result = fit(train, loss, design.lam)
    w_bar = debias(result, train, loss, design.covariance, params.zeta)
    report = infer(result.w_hat, w_bar, params.tau, design.covariance, config.level)
    truth = debiased_mean(params, design)
    support = design.w0 != 0
    z = (w_bar - truth) / report.std_err
    return ReplicateResult(
        rep=rep,
        precision=empirical_precision(result.w_hat, test),
        coverage=float(np.mean(report.covers(truth))),
        power=replicate_power(report, support),
        fit_converged=result.converged,
        null_z=z[~support],
        nonzero_rejected=int(report.rejected[support].sum()),
    )


def run_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    start = time.perf_counter()
    design = build_design(config, cell)
    try:
        _, params, trace = solve_cell(config, cell, design)
    except ReplicaError as exc:
        logger.warning("cell %s failed: %s", cell.ident(), exc)
        return CellResult(cell, f"failed: {type(exc).__name__}", seconds=time.perf_counter() - start)
    out = CellResult(
        cell, "ok", params, len(trace.residuals),
        theoretical_precision(params, design.mu_norm),
        theoretical_power(params, design, level=config.level),
        int(np.count_nonzero(design.w0)),
    )
    out.replicates = [run_replicate(config, cell, design, params, r) for r in range(config.replicates)]
    n_bad = sum(not r.fit_converged for r in out.replicates)
    if n_bad:
        logger.warning("cell %s: %d replicate fits did not reach the KKT tolerance", cell.ident(), n_bad)
    out.seconds = time.perf_counter() - start
    logger.info("cell %s done in %.1fs (%d iterations)", cell.ident(), out.seconds, out.iterations)
    return out


def _run_cell_star(args):
    return run_cell(*args)


def run_campaign(config: ExperimentConfig, cells=None) -> list:
    cells = list(config.cells() if cells is None else cells)
    if config.threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(config.threads) as pool:
            results = list(pool.map(_run_cell_star, [(config, c) for c in cells]))
    else:
        results = [run_cell(config, c) for c in cells]
    return sorted(results, key=lambda r: r.cell.key)


# summaries ---------------------------------------------------------------


def wilson_interval(successes: float, trials: int, level: float = CI_LEVEL) -> tuple[float, float]:
    z = norm.ppf(0.5 + level / 2.0)
    phat = successes / trials
    denom = 1.0 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return float(centre - half), float(centre + half)


def mean_ci(values: np.ndarray, trials_per_value: int, level: float = CI_LEVEL) -> tuple[float, float, float]:
    """Mean of replicate rates with a Student-t interval.

    When every replicate gives the same rate the t-interval collapses to a
    point, so a Wilson interval on the pooled counts is used instead.
    """
    values = np.asarray(values, dtype=float)
    r = values.size
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        lo, hi = wilson_interval(mean * trials_per_value * r, trials_per_value * r, level)
        return mean, lo, hi
    half = student_t.ppf(0.5 + level / 2.0, r - 1) * sd / np.sqrt(r)
    return mean, mean - half, mean + half


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


CELL_HEADER = ["structure", "sparsity", "log_lambda"]
NAN = float("nan")


def _cell_cols(c: Cell) -> list:
    # shortest round-trip repr keeps identifiers readable and exact
    return [c.structure, repr(float(c.sparsity)), repr(float(c.log_lambda))]


def precision_rows(config, results) -> list:
    rows = []
    for res in results:
        if res.ok:
            m, lo, hi = mean_ci(res.values("precision"), config.n_test)
            rows.append([*_cell_cols(res.cell), res.status, res.theo_precision, m, lo, hi, len(res.replicates)])
        else:
            rows.append([*_cell_cols(res.cell), res.status, NAN, NAN, NAN, NAN, 0])
    return rows


PRECISION_HEADER = CELL_HEADER + ["status", "theo_precision", "emp_mean", "emp_ci_low", "emp_ci_high", "n_reps"]


def power_rows(config, results) -> list:
    rows = []
    for res in results:
        if res.ok:
            m, lo, hi = mean_ci(res.values("power"), res.n_nonzero)
            rows.append([*_cell_cols(res.cell), res.status, res.theo_power, m, lo, hi, len(res.replicates)])
        else:
            rows.append([*_cell_cols(res.cell), res.status, NAN, NAN, NAN, NAN, 0])
    return rows


POWER_HEADER = CELL_HEADER + ["status", "theo_power", "emp_mean", "emp_ci_low", "emp_ci_high", "n_reps"]


def coverage_rows(results) -> list:
    rows = []
    for res in results:
        for r in res.replicates:
            rows.append([*_cell_cols(res.cell), r.rep, r.coverage])
    return rows


COVERAGE_HEADER = CELL_HEADER + ["replicate", "coverage"]


def coverage_summary_rows(results) -> list:
    rows = []
    for res in results:
        if res.ok:
            cov = res.values("coverage")
            rows.append([*_cell_cols(res.cell), res.status, float(cov.mean()), float(np.median(cov)),
                         float(cov.min()), float(cov.max()), len(cov)])
        else:
            rows.append([*_cell_cols(res.cell), res.status, NAN, NAN, NAN, NAN, 0])
    return rows


COVERAGE_SUMMARY_HEADER = CELL_HEADER + ["status", "mean", "median", "min", "max", "n_reps"]


def order_parameter_rows(results) -> list:
    rows = []
    for res in results:
        if res.ok:
            p = res.params
            rows.append([*_cell_cols(res.cell), res.status, *p.as_array(), p.tau, res.iterations,
                         res.theo_precision, res.theo_power])
        else:
            rows.append([*_cell_cols(res.cell), res.status, *([NAN] * 7), 0, NAN, NAN])
    return rows


ORDER_HEADER = CELL_HEADER + ["status", "zeta0", "zeta", "r0", "q0", "q", "r", "tau", "iterations",
                              "theo_precision", "theo_power"]


def _out(config, name) -> Path:
    return Path(config.output_dir) / name


def run_precision_experiment(config: ExperimentConfig, results=None) -> Path:
    results = run_campaign(config) if results is None else results
    write_csv(_out(config, "order_parameters.csv"), ORDER_HEADER, order_parameter_rows(results))
    return write_csv(_out(config, "precision.csv"), PRECISION_HEADER, precision_rows(config, results))


def run_coverage_experiment(config: ExperimentConfig, results=None) -> Path:
    results = run_campaign(config) if results is None else results
    write_csv(_out(config, "coverage_summary.csv"), COVERAGE_SUMMARY_HEADER, coverage_summary_rows(results))
    return write_csv(_out(config, "coverage.csv"), COVERAGE_HEADER, coverage_rows(results))


def run_power_experiment(config: ExperimentConfig, results=None) -> Path:
    results = run_campaign(config) if results is None else results
    return write_csv(_out(config, "power.csv"), POWER_HEADER, power_rows(config, results))


HISTOGRAM_HEADER = CELL_HEADER + ["coordinate", "nonzero", "w_hat", "w_bar", "theo_mean", "theo_sd"]


@dataclass
class HistogramData:
    cell: Cell
    params: OrderParameters
    w0: np.ndarray
    w_hat: np.ndarray
    w_bar: np.ndarray
    theo_mean: np.ndarray
    theo_sd: np.ndarray


def histogram_data(config: ExperimentConfig) -> HistogramData:
    """ŵ and w̄ for a single training set of the histogram cell."""
    cell = config.histogram_cell()
    design, params, _ = solve_cell(config, cell)
    loss = get_loss(config.loss)
    train = sample_dataset(design, np.random.default_rng(config.train_seed(cell, 0)))
    result = fit(train, loss, design.lam)
    w_bar = debias(result, train, loss, design.covariance, params.zeta)
    return HistogramData(cell, params, design.w0, result.w_hat, w_bar,
                         debiased_mean(params, design), debiased_sd(params, design))


def run_histogram_experiment(config: ExperimentConfig) -> Path:
    h = histogram_data(config)
    rows = [[*_cell_cols(h.cell), j, int(h.w0[j] != 0), h.w_hat[j], h.w_bar[j], h.theo_mean[j], h.theo_sd[j]]
            for j in range(h.w0.shape[0])]
    return write_csv(_out(config, "histogram.csv"), HISTOGRAM_HEADER, rows)


def run_all(config: ExperimentConfig) -> tuple[list, list, bool]:
    """Run the grid once and write every CSV; the flag is False if the histogram cell failed."""
    results = run_campaign(config)
    paths = [
        run_precision_experiment(config, results),
        run_coverage_experiment(config, results),
        run_power_experiment(config, results),
    ]
    try:
        paths.append(run_histogram_experiment(config))
    except ReplicaError as exc:
        logger.warning("histogram cell failed: %s", exc)
        return results, paths, False
    return results, paths, True
