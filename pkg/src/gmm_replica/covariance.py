"""Correlation structures for the mixture covariance and their matrix factors.

The covariance is always ``Sigma = sigma2 * R`` with ``R`` one of four
correlation structures: identity, 2x2 block diagonal, AR(1), and banded.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# relative to the largest eigenvalue
FACTOR_TOL = 1e-10


class CovarianceError(ValueError):
    """Invalid covariance parameters or a numerically non-PD matrix."""


class CovarianceKind(str, Enum):
    IID = "iid"
    BLOCK = "block"
    AR1 = "ar1"
    BANDED = "banded"

    @classmethod
    def parse(cls, value: "str | CovarianceKind") -> "CovarianceKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "iid": cls.IID,
            "identity": cls.IID,
            "block": cls.BLOCK,
            "blockdiagonal": cls.BLOCK,
            "ar1": cls.AR1,
            "banded": cls.BANDED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise CovarianceError(f"unknown covariance kind {value!r}") from None


@dataclass(frozen=True)
class CovarianceModel:
    """Declarative description of ``Sigma = sigma2 * R``.

    ``rho`` is the AR(1) / within-block correlation, ``band_value`` and
    ``band_width`` describe the banded structure.
    """

    kind: CovarianceKind
    p: int
    sigma2: float = 2.0
    rho: float = 0.8
    band_value: float = 0.4
    band_width: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", CovarianceKind.parse(self.kind))
        if int(self.p) != self.p or self.p < 1:
            raise CovarianceError(f"p must be a positive integer, got {self.p}")
        if not self.sigma2 > 0:
            raise CovarianceError(f"sigma2 must be positive, got {self.sigma2}")
        if not -1.0 < self.rho < 1.0:
            raise CovarianceError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.band_width < 1:
            raise CovarianceError(f"band_width must be >= 1, got {self.band_width}")
        if self.kind is CovarianceKind.BLOCK and self.p % 2:
            raise CovarianceError(f"block-diagonal structure needs even p, got {self.p}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sigma2": self.sigma2,
            "rho": self.rho,
            "band_value": self.band_value,
            "band_width": self.band_width,
        }


def build_correlation(model: CovarianceModel) -> np.ndarray:
    """Return the p x p correlation matrix ``R`` (unit diagonal)."""
    p = model.p
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    if model.kind is CovarianceKind.IID:
        corr = np.eye(p)
    elif model.kind is CovarianceKind.BLOCK:
        same_block = (idx[:, None] // 2) == (idx[None, :] // 2)
        corr = np.where(same_block, model.rho, 0.0)
    elif model.kind is CovarianceKind.AR1:
        corr = model.rho ** lag.astype(float)
    else:
        corr = np.where(lag <= model.band_width, model.band_value, 0.0)
    np.fill_diagonal(corr, 1.0)
    return corr


@dataclass(frozen=True)
class CovarianceFactors:
    """``Sigma`` together with its symmetric square root and inverse.

    Instances are read-only; the arrays are flagged non-writeable so a
    factor object can be shared between workers.
    """

    sigma: np.ndarray
    sqrt_sigma: np.ndarray
    inv_sigma: np.ndarray
    inv_diag: np.ndarray
    is_diagonal: bool = False

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def from_matrix(cls, sigma: np.ndarray) -> "CovarianceFactors":
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise CovarianceError(f"expected a square matrix, got shape {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * np.abs(sigma).max()):
            raise CovarianceError("covariance matrix is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        off = sigma - np.diag(np.diag(sigma))
        if not off.any():
            d = np.diag(sigma)
            if d.min() <= FACTOR_TOL * d.max():
                raise CovarianceError(
                    f"covariance is not positive definite (smallest eigenvalue {d.min():.3e})"
                )
            sqrt_sigma = np.diag(np.sqrt(d))
            inv_sigma = np.diag(1.0 / d)
            diagonal = True
        else:
            evals, evecs = np.linalg.eigh(sigma)
            if evals[0] <= FACTOR_TOL * evals[-1]:
                raise CovarianceError(
                    f"covariance is not positive definite (smallest eigenvalue {evals[0]:.3e})"
                )
            sqrt_sigma = (evecs * np.sqrt(evals)) @ evecs.T
            inv_sigma = (evecs / evals) @ evecs.T
            sqrt_sigma = 0.5 * (sqrt_sigma + sqrt_sigma.T)
            inv_sigma = 0.5 * (inv_sigma + inv_sigma.T)
            diagonal = False
        inv_diag = np.diag(inv_sigma).copy()
        for arr in (sigma, sqrt_sigma, inv_sigma, inv_diag):
            arr.setflags(write=False)
        return cls(sigma, sqrt_sigma, inv_sigma, inv_diag, diagonal)


def factorize(model: CovarianceModel) -> CovarianceFactors:
    """Build ``Sigma = sigma2 * R`` and factor it by eigendecomposition."""
    return CovarianceFactors.from_matrix(model.sigma2 * build_correlation(model))
