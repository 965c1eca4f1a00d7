"""Penalised margin classifiers and the quadratic LASSO sub-problem.

``fit`` minimises

    sum_i V(y_i x_i'w / sqrt(p)) + lam * ||w||_1

exactly as written (no 1/n factor).  ``solve_quad_lasso`` minimises

    zeta/2 w'Sigma w - b'w + lam * ||w||_1     (or + lam * ||w||^2)

which is the per-sample problem of the replica vector channel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import _kernels
from .covariance import CovarianceFactors
from .gmm_data import Dataset
from .losses import LossKind, LossModel, get_loss

KKT_TOL = 1e-8
CHANGE_TOL = 1e-10


class FitError(ArithmeticError):
    pass


@dataclass
class FitResult:
    w_hat: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "value"])
            for j, v in enumerate(self.w_hat):
                writer.writerow([j, repr(float(v))])


def margins(dataset: Dataset, w: np.ndarray) -> np.ndarray:
    """Scaled margins ``y_i x_i'w / sqrt(p)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.shape[0] != dataset.x.shape[1]:
        raise ValueError(f"w has shape {w.shape}, expected ({dataset.x.shape[1]},)")
    if dataset.y.shape[0] != dataset.x.shape[0]:
        raise ValueError("x and y disagree on the number of rows")
    return dataset.y * (dataset.x @ w) / np.sqrt(dataset.x.shape[1])


def objective(dataset: Dataset, loss: LossModel, lam: float, w: np.ndarray) -> float:
    return float(np.sum(loss.value(margins(dataset, w))) + lam * np.abs(w).sum())


def _scaled_design(dataset: Dataset) -> np.ndarray:
    return np.ascontiguousarray(dataset.y[:, None] * dataset.x / np.sqrt(dataset.x.shape[1]))


def kkt_residual(dataset: Dataset, loss: LossModel, lam: float, w: np.ndarray) -> float:
    """Largest violation of the L1 optimality conditions at ``w`` (smooth losses)."""
    z = _scaled_design(dataset)
    g = z.T @ loss.derivative(z @ w)
    return float(_kernels._l1_kkt(np.asarray(w, dtype=float), g, lam))


def fit(
    dataset: Dataset,
    loss: "LossModel | str",
    lam: float,
    *,
    tol: float = KKT_TOL,
    max_iter: int = 500,
    warm_start: np.ndarray | None = None,
) -> FitResult:
    """Minimise the penalised empirical margin loss.

    Logistic loss uses proximal Newton (inner cyclic coordinate descent on
    the local quadratic model, Armijo backtracking on the true objective).
    Hinge loss is solved exactly as a linear program.  A fit that exhausts
    ``max_iter`` is returned with ``converged=False``.
    """
    loss = get_loss(loss)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if dataset.n < 1:
        raise ValueError("empty training set")
    if loss.kind is LossKind.HINGE:
        return _fit_hinge(dataset, lam)
    z = _scaled_design(dataset)
    w = np.zeros(z.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    trace = np.empty(max_iter + 1)
    f, kkt, iters, ok, n_trace = _kernels.logistic_l1_fit(z, float(lam), w, tol, max_iter, 1000, trace)
    if not np.isfinite(f):
        raise FitError("objective became non-finite")
    return FitResult(w, float(f), float(kkt), int(iters), bool(ok), trace[:n_trace].copy())


def hinge_kkt_residual(z: np.ndarray, w: np.ndarray, lam: float, dual: np.ndarray) -> float:
    """KKT violation for hinge + L1 given multipliers ``dual`` in [0, 1].

    ``-dual_i`` must be a subgradient of the hinge at margin ``m_i`` and
    ``z' dual`` must lie in ``lam * d|w|_1``.
    """
    m = z @ w
    pi = np.clip(dual, 0.0, 1.0)
    # subgradient-interval violation: pi = 1 below the kink, 0 above it
    margin_viol = np.where(m < 1.0, (1.0 - pi) * (1.0 - m), 0.0) + np.where(m > 1.0, pi * (m - 1.0), 0.0)
    g = -(z.T @ pi)
    coef_viol = _kernels._l1_kkt(np.asarray(w, dtype=float), g, lam)
    return float(max(coef_viol, margin_viol.max(initial=0.0), np.abs(dual - pi).max(initial=0.0)))


def _fit_hinge(dataset: Dataset, lam: float) -> FitResult:
    z = _scaled_design(dataset)
    n, p = z.shape
    c = np.concatenate([np.full(2 * p, lam), np.ones(n)])
    a_ub = np.hstack([-z, z, -np.eye(n)])
    b_ub = -np.ones(n)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise FitError(f"hinge LP failed: {res.message}")
    w = res.x[:p] - res.x[p:2 * p]
    w[np.abs(w) < 1e-13] = 0.0
    dual = -res.ineqlin.marginals
    kkt = hinge_kkt_residual(z, w, lam, dual)
    obj = float(np.maximum(0.0, 1.0 - z @ w).sum() + lam * np.abs(w).sum())
    return FitResult(w, obj, kkt, int(res.nit), True, np.array([obj]))


@dataclass(frozen=True)
class QuadLassoProblem:
    """``zeta/2 w'Sigma w - b'w + lam * J(w)`` with ``J = |.|_1`` or ``|.|^2``."""

    zeta: float
    sigma: CovarianceFactors
    b: np.ndarray
    lam: float
    penalty: str = "l1"

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.penalty not in ("l1", "ridge"):
            raise ValueError(f"penalty must be 'l1' or 'ridge', got {self.penalty!r}")
        if np.shape(self.b) != (self.sigma.p,):
            raise ValueError("b must have length p")


@dataclass
class QuadLassoResult:
    w: np.ndarray
    kkt_residual: float
    sweeps: int
    converged: bool


def solve_quad_lasso(
    problem: QuadLassoProblem,
    warm_start: np.ndarray | None = None,
    *,
    change_tol: float = CHANGE_TOL,
    kkt_tol: float = KKT_TOL,
    max_sweeps: int = 100_000,
    polish: bool = True,
) -> QuadLassoResult:
    """Cyclic coordinate descent in index order (deterministic).

    Converged means the largest coordinate change of a full sweep is at most
    ``change_tol`` and the KKT residual is at most ``kkt_tol``.  With
    ``polish`` the L1 solve also tries an exact linear solve on the active
    set once the signs have settled.
    """
    sigma = np.ascontiguousarray(problem.sigma.sigma)
    b = np.array(problem.b, dtype=float)
    w = np.zeros(sigma.shape[0]) if warm_start is None else np.array(warm_start, dtype=float)
    kkt, sweeps, ok = _kernels.quad_lasso_cd(
        sigma, b, float(problem.zeta), float(problem.lam), w,
        problem.penalty == "ridge", change_tol, kkt_tol, max_sweeps, polish,
    )
    return QuadLassoResult(w, float(kkt), int(sweeps), bool(ok))


def solve_quad_lasso_batch(
    sigma: CovarianceFactors,
    bmat: np.ndarray,
    zeta: float,
    lam: float,
    *,
    penalty: str = "l1",
    change_tol: float = CHANGE_TOL,
    kkt_tol: float = KKT_TOL,
    max_sweeps: int = 100_000,
):
    """Solve one quad-lasso per row of ``bmat``; returns ``(W, kkt, converged)``.

    A diagonal ``Sigma`` is solved in closed form (soft thresholding).
    """
    bmat = np.ascontiguousarray(bmat, dtype=float)
    if sigma.is_diagonal:
        d = zeta * np.diag(sigma.sigma)
        if penalty == "ridge":
            w = bmat / (d + 2.0 * lam)
        else:
            w = np.sign(bmat) * np.maximum(np.abs(bmat) - lam, 0.0) / d
        return w, np.zeros(bmat.shape[0]), np.ones(bmat.shape[0], dtype=bool)
    return _kernels.quad_lasso_batch(
        np.ascontiguousarray(sigma.sigma), bmat, float(zeta), float(lam),
        penalty == "ridge", change_tol, kkt_tol, max_sweeps, True,
    )
