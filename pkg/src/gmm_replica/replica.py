"""Alternating fixed-point solver for the six replica order parameters.

Two groups are updated in turn:

* the q-group ``(q0, q, R)`` from Monte-Carlo averages over ``z ~ N(0, I_p)``
  of the quad-lasso solution ``w_z`` (see ``classifier.solve_quad_lasso``);
* the zeta-group ``(zeta0, zeta, R0)`` from Gauss-Hermite averages over a
  scalar ``eps ~ N(0, 1)`` of the loss proximal map at
  ``m = R*mu + sqrt(q0)*eps``.

The z-samples are drawn once per solve (common random numbers), so the
iteration is a deterministic map and reruns are bit-identical.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.stats import norm

from .classifier import solve_quad_lasso_batch
from .gmm_data import MixtureDesign
from .losses import LossModel, get_loss

logger = logging.getLogger(__name__)

PARAM_NAMES = ("zeta0", "zeta", "r0", "q0", "q", "r")


class ReplicaError(ArithmeticError):
    pass


class FullySparseError(ReplicaError):
    """Every Monte-Carlo quad-lasso solution is zero: lambda is past the point
    where the L1 threshold kills all coordinates, so q0 = q = R = 0."""


class NonConvergenceError(ReplicaError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OrderParameters:
    zeta0: float
    zeta: float
    r0: float
    q0: float
    q: float
    r: float

    @property
    def tau(self) -> float:
        return float(np.sqrt(self.zeta0) / self.zeta)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tau"] = self.tau
        return out


@dataclass
class SolverOptions:
    """Knobs of the fixed-point iteration.

    ``damping`` applies to the zeta-group only.  With ``adaptive_damping``
    the factor is halved (down to ``min_damping``) whenever the residual
    fails to decrease for ``patience`` consecutive iterations.
    ``penalty="ridge"`` swaps the L1 penalty for ``lam * |w|^2``.
    """

    mc_samples: int = 1000
    quad_nodes: int = 64
    damping: float = 0.5
    tol: float = 1e-6
    max_iters: int = 500
    seed: int = 0
    penalty: str = "l1"
    adaptive_damping: bool = True
    min_damping: float = 0.02
    patience: int = 8
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.mc_samples < 2 or self.quad_nodes < 1 or self.max_iters < 1:
            raise ValueError("mc_samples >= 2, quad_nodes >= 1 and max_iters >= 1 are required")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.penalty not in ("l1", "ridge"):
            raise ValueError(f"penalty must be 'l1' or 'ridge', got {self.penalty!r}")


@dataclass
class SolveTrace:
    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    dampings: list = field(default_factory=list)
    converged: bool = False

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", *PARAM_NAMES, "residual"])
            for k, (it, res) in enumerate(zip(self.iterates, self.residuals)):
                writer.writerow([k, *(repr(float(v)) for v in it.as_array()), repr(float(res))])


@dataclass
class QGroupEstimate:
    """Monte-Carlo means of the q-group and their standard errors."""

    q0: float
    q: float
    r: float
    stderr: np.ndarray
    n_zero: int

    def __iter__(self):
        return iter((self.q0, self.q, self.r))


class ZStream:
    """Fixed block of standard normal ``z`` draws reused in every iteration."""

    def __init__(self, design: MixtureDesign, samples: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x2A]))
        self.z = rng.standard_normal((samples, design.p))
        fac = design.covariance
        if fac.is_diagonal:
            self.sz = self.z * np.diag(fac.sqrt_sigma)
        else:
            self.sz = self.z @ fac.sqrt_sigma
        self.samples = samples


def gauss_hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E f(eps)``, ``eps ~ N(0, 1)``."""
    t, w = hermgauss(nodes)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def update_zeta_group(
    params: OrderParameters,
    design: MixtureDesign,
    loss: "LossModel | str",
    options: SolverOptions | None = None,
) -> tuple[float, float, float]:
    """Quadrature update of ``(zeta0, zeta, R0)`` from ``(q0, q, R)``."""
    options = options or SolverOptions()
    loss = get_loss(loss)
    q0, q, r = params.q0, params.q, params.r
    if not (q0 > 0 and q > 0 and np.isfinite(r)):
        raise ReplicaError(f"zeta-group needs q0 > 0, q > 0 and finite R, got {(q0, q, r)}")
    eps, wts = gauss_hermite(options.quad_nodes)
    sq0 = np.sqrt(q0)
    m = r * design.mu_norm + sq0 * eps
    d = loss.prox(m, q) - m
    zeta0 = design.alpha / q**2 * np.dot(wts, d * d)
    zeta = -design.alpha / (q * sq0) * np.dot(wts, d * eps)
    r0 = design.alpha * design.mu_norm / q * np.dot(wts, d)
    out = (float(zeta0), float(zeta), float(r0))
    if not all(np.isfinite(out)):
        raise ReplicaError(f"zeta-group produced non-finite values {out}")
    return out


def _solve_samples(design, options, z_stream, zeta0, zeta, r0):
    p = design.p
    lam = design.lam
    bmat = np.sqrt(zeta0) * z_stream.sz + np.sqrt(p) * r0 * design.mu_hat
    threads = max(1, int(options.threads))
    if threads == 1 or design.covariance.is_diagonal:
        return solve_quad_lasso_batch(design.covariance, bmat, zeta, lam, penalty=options.penalty)
    chunks = np.array_split(np.arange(bmat.shape[0]), threads)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(
            lambda idx: solve_quad_lasso_batch(design.covariance, bmat[idx], zeta, lam, penalty=options.penalty),
            chunks,
        ))
    return (np.concatenate([w for w, _, _ in parts]),
            np.concatenate([k for _, k, _ in parts]),
            np.concatenate([c for _, _, c in parts]))


def q_group_samples(params, design, options, z_stream) -> np.ndarray:
    """Per-sample ``(w'Sigma w/p, w'Sigma^{1/2}z/(p sqrt(zeta0)), w'mu_hat/sqrt(p))``."""
    zeta0, zeta, r0 = params.zeta0, params.zeta, params.r0
    if not (zeta0 > 0 and zeta > 0):
        raise ReplicaError(f"q-group needs zeta0 > 0 and zeta > 0, got {(zeta0, zeta)}")
    w, _, ok = _solve_samples(design, options, z_stream, zeta0, zeta, r0)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise ReplicaError(f"quad-lasso did not converge on Monte-Carlo sample {bad}")
    p = design.p
    fac = design.covariance
    sw = w * np.diag(fac.sigma) if fac.is_diagonal else w @ fac.sigma
    return np.column_stack([
        np.einsum("sj,sj->s", w, sw) / p,
        np.einsum("sj,sj->s", w, z_stream.sz) / (p * np.sqrt(zeta0)),
        w @ design.mu_hat / np.sqrt(p),
    ])


def update_q_group(
    params: OrderParameters,
    design: MixtureDesign,
    options: SolverOptions | None = None,
    z_stream: ZStream | None = None,
) -> QGroupEstimate:
    """Monte-Carlo update of ``(q0, q, R)`` from ``(zeta0, zeta, R0)``."""
    options = options or SolverOptions()
    if z_stream is None:
        z_stream = ZStream(design, options.mc_samples, options.seed)
    s = q_group_samples(params, design, options, z_stream)
    mean = s.mean(axis=0)
    se = s.std(axis=0, ddof=1) / np.sqrt(s.shape[0])
    n_zero = int(np.sum(s[:, 0] == 0.0))
    return QGroupEstimate(float(mean[0]), float(mean[1]), float(mean[2]), se, n_zero)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-8)))


def solve_fixed_point(
    design: MixtureDesign,
    loss: "LossModel | str",
    options: SolverOptions | None = None,
    init: "OrderParameters | tuple | None" = None,
) -> tuple[OrderParameters, SolveTrace]:
    """Alternate the two groups until the largest relative change of all six
    parameters drops below ``options.tol``.

    ``init`` seeds ``(zeta0, zeta, R0)``; the default is ``(1, 1, 1)``.
    Raises ``FullySparseError`` if every quad-lasso sample is zero and
    ``NonConvergenceError`` (carrying the trace) after ``max_iters``.
    """
    options = options or SolverOptions()
    loss = get_loss(loss)
    z_stream = ZStream(design, options.mc_samples, options.seed)
    if init is None:
        zeta0, zeta, r0 = 1.0, 1.0, 1.0
    elif isinstance(init, OrderParameters):
        zeta0, zeta, r0 = init.zeta0, init.zeta, init.r0
    else:
        zeta0, zeta, r0 = map(float, init)
    current = OrderParameters(zeta0, zeta, r0, np.nan, np.nan, np.nan)
    trace = SolveTrace()
    damping = options.damping
    best = np.inf
    stall = 0
    for it in range(options.max_iters):
        est = update_q_group(current, design, options, z_stream)
        if est.n_zero == z_stream.samples:
            raise FullySparseError(
                f"all {z_stream.samples} quad-lasso samples are zero at lambda={design.lam:.4g}; "
                "the penalty exceeds the level at which any coordinate can enter the model"
            )
        with_q = replace(current, q0=est.q0, q=est.q, r=est.r)
        proposal = np.array(update_zeta_group(with_q, design, loss, options))
        if proposal[1] <= 0:
            logger.warning("zeta proposal %.3e is not positive; using the opposite sign", proposal[1])
            proposal[1] = -proposal[1]
        old = np.array([current.zeta0, current.zeta, current.r0])
        mixed = damping * proposal + (1.0 - damping) * old
        new = OrderParameters(*map(float, mixed), est.q0, est.q, est.r)
        if it == 0:
            residual = np.inf
        else:
            residual = _relative_change(new.as_array(), current.as_array())
        trace.iterates.append(new)
        trace.residuals.append(residual)
        trace.dampings.append(damping)
        current = new
        if residual <= options.tol:
            trace.converged = True
            return current, trace
        if residual < best:
            best, stall = residual, 0
        else:
            stall += 1
            if options.adaptive_damping and stall >= options.patience and damping > options.min_damping:
                damping = max(options.min_damping, 0.5 * damping)
                best, stall = residual, 0
                logger.debug("iteration %d: damping reduced to %.3g", it, damping)
    raise NonConvergenceError(
        f"no fixed point within {options.max_iters} iterations (last residual {trace.residuals[-1]:.3e})",
        trace,
    )


def theoretical_precision(params: OrderParameters, mu_norm: float) -> float:
    """Limiting probability of correct classification, ``Phi(R mu / sqrt(q0))``."""
    if not params.q0 > 0:
        raise ValueError("q0 must be positive")
    return float(norm.cdf(params.r * mu_norm / np.sqrt(params.q0)))


def debiased_mean(params: OrderParameters, design: MixtureDesign) -> np.ndarray:
    """Centre of the de-biased estimator, ``sqrt(p) R0 Sigma^{-1} mu_hat / zeta``."""
    return np.sqrt(design.p) * params.r0 * (design.covariance.inv_sigma @ design.mu_hat) / params.zeta


def debiased_sd(params: OrderParameters, design: MixtureDesign) -> np.ndarray:
    return params.tau * np.sqrt(design.covariance.inv_diag)


def power_from_ratio(ratio, level: float = 0.05):
    """Two-sided power of a z-test whose statistic has mean ``ratio`` and unit sd."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    zs = norm.ppf(1.0 - level / 2.0)
    ratio = np.asarray(ratio, dtype=float)
    return norm.cdf(-zs + ratio) + norm.cdf(-zs - ratio)


def theoretical_power(params: OrderParameters, design: MixtureDesign, j=None, level: float = 0.05):
    """Limiting rejection probability of ``H0: w_j = 0`` at the given level.

    ``j=None`` returns the average over the truly nonzero coordinates.
    """
    ratio = debiased_mean(params, design) / debiased_sd(params, design)
    if j is not None:
        return float(power_from_ratio(ratio[j], level))
    support = design.w0 != 0
    return float(np.mean(power_from_ratio(ratio[support], level)))
