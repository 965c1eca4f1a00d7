"""De-biased estimator, per-coordinate tests and simulation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .classifier import FitResult, margins
from .covariance import CovarianceFactors
from .gmm_data import Dataset
from .losses import LossModel, get_loss

# mean |standardised residual| above this means truth and w_bar live on different scales
SCALE_FLAG = 5.0


class ScaleMismatchError(ValueError):
    pass


def debias(
    fit: "FitResult | np.ndarray",
    dataset: Dataset,
    loss: "LossModel | str",
    factors: CovarianceFactors,
    zeta: float,
) -> np.ndarray:
    """``w_bar = w_hat - Sigma^{-1} sum_i y_i V'(m_i) x_i / (sqrt(p) zeta)``."""
    w_hat = fit.w_hat if isinstance(fit, FitResult) else np.asarray(fit, dtype=float)
    if not zeta > 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    if factors.p != dataset.p:
        raise ValueError("covariance dimension does not match the data")
    loss = get_loss(loss)
    coef = dataset.y * loss.derivative(margins(dataset, w_hat))
    return w_hat - factors.inv_sigma @ (dataset.x.T @ coef) / (np.sqrt(dataset.p) * zeta)


def critical_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return float(norm.ppf(1.0 - level / 2.0))


def p_value(w_bar_j, tau: float, inv_diag_j):
    """Two-sided normal p-value ``2 (1 - Phi(|w_bar_j| / (tau sqrt(inv_diag_j))))``."""
    if not tau > 0 or np.any(np.asarray(inv_diag_j) <= 0):
        raise ValueError("tau and inv_diag must be positive")
    stat = np.abs(w_bar_j) / (tau * np.sqrt(inv_diag_j))
    out = 2.0 * norm.sf(stat)
    return float(out) if np.ndim(out) == 0 else out


def confidence_interval(w_bar_j, tau: float, inv_diag_j, level: float = 0.05):
    """``w_bar_j -/+ z* tau sqrt(inv_diag_j)`` with ``z* = Phi^{-1}(1 - level/2)``."""
    half = critical_value(level) * tau * np.sqrt(inv_diag_j)
    return w_bar_j - half, w_bar_j + half


@dataclass
class InferenceReport:
    w_hat: np.ndarray
    w_bar: np.ndarray
    tau: float
    std_err: np.ndarray
    p_values: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    rejected: np.ndarray
    level: float

    def covers(self, truth: np.ndarray) -> np.ndarray:
        return (self.ci_lower <= truth) & (truth <= self.ci_upper)

    def to_csv(self, path, truth: np.ndarray | None = None) -> None:
        truth = np.full_like(self.w_bar, np.nan) if truth is None else truth
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["coordinate", "w_hat", "w_bar", "std_err", "p_value",
                             "ci_lower", "ci_upper", "truth", "rejected"])
            for j in range(self.w_bar.shape[0]):
                row = [self.w_hat[j], self.w_bar[j], self.std_err[j], self.p_values[j],
                       self.ci_lower[j], self.ci_upper[j], truth[j]]
                writer.writerow([j, *(repr(float(v)) for v in row), int(self.rejected[j])])


def infer(w_hat: np.ndarray, w_bar: np.ndarray, tau: float, factors: CovarianceFactors,
          level: float = 0.05) -> InferenceReport:
    """Assemble p-values, intervals and decisions for every coordinate.

    The decision is taken from the interval (reject iff 0 is outside), and
    the p-value is computed from the same standardised statistic, so the
    two agree exactly except where the statistic sits on the critical value.
    """
    std_err = tau * np.sqrt(factors.inv_diag)
    zs = critical_value(level)
    stat = np.abs(w_bar) / std_err
    pv = 2.0 * norm.sf(stat)
    lo, hi = w_bar - zs * std_err, w_bar + zs * std_err
    rejected = stat > zs
    return InferenceReport(np.asarray(w_hat, dtype=float), w_bar, float(tau), std_err, pv, lo, hi, rejected, level)


def empirical_precision(w: np.ndarray, test: Dataset) -> float:
    """Fraction of test rows with ``y x'w > 0``; exact zeros count as errors."""
    if test.n == 0:
        raise ValueError("empty test set")
    return float(np.mean(test.y * (test.x @ w) > 0.0))


def _standardised(reports, truth):
    return np.concatenate([(r.w_bar - truth) / r.std_err for r in reports])


def check_scale(reports, truth) -> None:
    if np.mean(np.abs(_standardised(reports, truth))) > SCALE_FLAG:
        raise ScaleMismatchError("truth and de-biased estimates appear to be on different scales")


def empirical_coverage(reports, truth: np.ndarray, *, check: bool = True) -> float:
    """Fraction of (replicate, coordinate) intervals that contain ``truth``.

    With ``check`` a ``ScaleMismatchError`` is raised when the mean absolute
    standardised residual exceeds ``SCALE_FLAG``.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    truth = np.asarray(truth, dtype=float)
    if check:
        check_scale(reports, truth)
    return float(np.mean([r.covers(truth) for r in reports]))


def replicate_power(report: InferenceReport, support: np.ndarray) -> float:
    if not support.any():
        raise ValueError("the truth has no nonzero coordinate")
    return float(np.mean(report.rejected[support]))


def empirical_power(reports, truth: np.ndarray) -> float:
    """Share of truly nonzero coordinates whose interval excludes zero, averaged over replicates."""
    support = np.asarray(truth) != 0
    return float(np.mean([replicate_power(r, support) for r in reports]))


@dataclass
class ExperimentMetrics:
    empirical_precision: float
    empirical_coverage: float
    empirical_power: float
    theoretical_precision: float
    theoretical_power: float

    def __post_init__(self):
        for name, v in vars(self).items():
            if not (0.0 <= v <= 1.0 or np.isnan(v)):
                raise ValueError(f"{name}={v} is not a rate")
