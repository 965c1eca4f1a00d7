"""Planted sparse truth, class means and two-component Gaussian mixture samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import CovarianceFactors


class DesignError(ValueError):
    pass


def make_sparse_truth(p: int, sparsity: float, rng: np.random.Generator) -> np.ndarray:
    """0/1 vector with exactly ``round(sparsity * p)`` ones at random positions."""
    if not 0.0 < sparsity <= 1.0:
        raise DesignError(f"sparsity must lie in (0, 1], got {sparsity}")
    k = int(round(sparsity * p))
    if k < 1:
        raise DesignError(f"sparsity {sparsity} leaves no nonzero among p={p} coordinates")
    w0 = np.zeros(p)
    w0[rng.permutation(p)[:k]] = 1.0
    return w0


def make_mean(factors: CovarianceFactors, w0: np.ndarray, target_norm: float) -> np.ndarray:
    """``mu = a * Sigma @ w0`` with ``a`` chosen so that ``||mu|| = target_norm``."""
    direction = factors.sigma @ np.asarray(w0, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise DesignError("Sigma @ w0 vanishes; the mixture carries no signal")
    return (target_norm / norm) * direction


@dataclass
class MixtureDesign:
    """One problem instance: dimension, sample ratio, means, covariance, penalty."""

    p: int
    alpha: float
    mu: np.ndarray
    covariance: CovarianceFactors
    w0: np.ndarray
    sparsity: float
    lam: float
    mu_norm: float = field(init=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.w0 = np.asarray(self.w0, dtype=float)
        if self.mu.shape != (self.p,) or self.w0.shape != (self.p,):
            raise DesignError("mu and w0 must have length p")
        if self.covariance.p != self.p:
            raise DesignError("covariance dimension does not match p")
        if not self.alpha > 0:
            raise DesignError(f"alpha must be positive, got {self.alpha}")
        if not self.lam > 0:
            raise DesignError(f"lambda must be positive, got {self.lam}")
        self.mu_norm = float(np.linalg.norm(self.mu))
        if self.mu_norm == 0.0:
            raise DesignError("mu must be nonzero")

    @property
    def n(self) -> int:
        return int(round(self.alpha * self.p))

    @property
    def mu_hat(self) -> np.ndarray:
        return self.mu / self.mu_norm

    @classmethod
    def build(
        cls,
        covariance: CovarianceFactors,
        *,
        alpha: float,
        sparsity: float,
        mu_norm: float,
        lam: float,
        rng: np.random.Generator,
    ) -> "MixtureDesign":
        """Draw ``w0`` and set ``mu = a * Sigma @ w0`` with ``||mu|| = mu_norm``."""
        w0 = make_sparse_truth(covariance.p, sparsity, rng)
        mu = make_mean(covariance, w0, mu_norm)
        return cls(covariance.p, alpha, mu, covariance, w0, sparsity, lam)

    def with_lambda(self, lam: float) -> "MixtureDesign":
        return type(self)(self.p, self.alpha, self.mu, self.covariance, self.w0, self.sparsity, lam)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path) -> None:
        """One row per observation: ``y, x1, ..., xp`` with full precision."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y"] + [f"x{j + 1}" for j in range(self.p)])
            for yi, xi in zip(self.y, self.x):
                writer.writerow([int(yi)] + [repr(float(v)) for v in xi])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(x=data[:, 1:], y=data[:, 0])


def sample_dataset(
    design: MixtureDesign,
    rng: np.random.Generator,
    n: int | None = None,
    seed: int | None = None,
) -> Dataset:
    """Draw ``n`` (default ``round(alpha*p)``) labelled points.

    ``y`` is +1/-1 with probability 1/2 each and ``x | y ~ N(y*mu, Sigma)``.
    """
    n = design.n if n is None else int(n)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    g = rng.standard_normal((n, design.p))
    if design.covariance.is_diagonal:
        noise = g * np.diag(design.covariance.sqrt_sigma)
    else:
        noise = g @ design.covariance.sqrt_sigma
    x = y[:, None] * design.mu + noise
    return Dataset(x=x, y=y, seed=seed)
