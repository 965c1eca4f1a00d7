"""Convex margin losses V(u) and their scalar proximal maps.

The proximal map solved here is

    u_hat(m, q) = argmin_u  V(u) + (u - m)^2 / (2 q),

which is the inner problem of the replica scalar channel (``m`` is the
Gaussian-shifted margin ``R*mu + sqrt(q0)*eps``).  All functions accept
scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

PROX_MAX_ITER = 200


class LossKind(str, Enum):
    LOGISTIC = "logistic"
    HINGE = "hinge"


class ProxConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ProxQuery:
    """Shift ``m`` and scale ``q > 0`` of a proximal problem."""

    m: float
    q: float

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"prox scale q must be positive, got {self.q}")


class LossModel:
    """Base class: a convex, non-increasing margin loss with V(+inf) = 0."""

    kind: LossKind
    smooth: bool

    def value(self, u):
        raise NotImplementedError

    def derivative(self, u):
        raise NotImplementedError

    def prox(self, m, q):
        raise NotImplementedError

    def prox_query(self, query: ProxQuery) -> float:
        return float(self.prox(query.m, query.q))

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return isinstance(other, LossModel) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)


class LogisticLoss(LossModel):
    """V(u) = log(1 + exp(-u))."""

    kind = LossKind.LOGISTIC
    smooth = True

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return np.logaddexp(0.0, -u)

    def derivative(self, u):
        # -1/(1+e^u) evaluated without overflow
        return -expit(-np.asarray(u, dtype=float))

    def curvature(self, u):
        s = expit(-np.asarray(u, dtype=float))
        return s * (1.0 - s)

    def prox(self, m, q):
        """Root of ``u - m = q / (1 + e^u)`` by bracketed Newton.

        The root lies in ``[m, m + q]`` because ``0 <= -V'(u) <= 1``.
        Newton steps that leave the current bracket are replaced by
        bisection, so convergence is guaranteed.
        """
        m = np.asarray(m, dtype=float)
        q = np.asarray(q, dtype=float)
        if np.any(q <= 0):
            raise ValueError("prox scale q must be positive")
        m, q = np.broadcast_arrays(m, q)
        lo = m.copy()
        hi = m + q
        # one Newton step from the left end of the bracket
        s = expit(-m)
        u = m + q * s / (1.0 + q * s * (1.0 - s))
        scale = 1.0 + np.abs(m) + q
        dx_old = hi - lo
        for _ in range(PROX_MAX_ITER):
            s = expit(-u)
            f = u - m - q * s
            # residual at the rounding level of u - m
            done = np.abs(f) <= 4e-16 * (np.abs(u) + np.abs(m) + q * s + 1e-300)
            if np.all(done | (hi - lo <= 4e-16 * scale)):
                break
            lo = np.where(f < 0, u, lo)
            hi = np.where(f > 0, u, hi)
            dx = f / (1.0 + q * s * (1.0 - s))
            u_new = u - dx
            # bisect when Newton leaves the bracket or stops halving its step
            slow = (u_new <= lo) | (u_new >= hi) | (2.0 * np.abs(dx) > np.abs(dx_old))
            u_new = np.where(slow, 0.5 * (lo + hi), u_new)
            dx_old = np.where(slow, 0.5 * (hi - lo), dx)
            u = np.where(done, u, u_new)
        else:
            raise ProxConvergenceError("logistic prox did not converge")
        return u[()] if u.ndim == 0 else u


class HingeLoss(LossModel):
    """V(u) = max(0, 1 - u)."""

    kind = LossKind.HINGE
    smooth = False

    def value(self, u):
        return np.maximum(0.0, 1.0 - np.asarray(u, dtype=float))

    def derivative(self, u):
        # right subgradient at the kink u = 1
        return np.where(np.asarray(u, dtype=float) < 1.0, -1.0, 0.0)

    def prox(self, m, q):
        m = np.asarray(m, dtype=float)
        q = np.asarray(q, dtype=float)
        if np.any(q <= 0):
            raise ValueError("prox scale q must be positive")
        u = np.where(m > 1.0, m, np.where(m < 1.0 - q, m + q, 1.0))
        return u[()] if u.ndim == 0 else u


LOGISTIC = LogisticLoss()
HINGE = HingeLoss()


def get_loss(name: "str | LossKind | LossModel") -> LossModel:
    if isinstance(name, LossModel):
        return name
    kind = LossKind(str(getattr(name, "value", name)).strip().lower())
    return LOGISTIC if kind is LossKind.LOGISTIC else HINGE


def value(loss: LossModel, u):
    return loss.value(u)


def derivative(loss: LossModel, u):
    return loss.derivative(u)


def prox(loss: LossModel, query: ProxQuery) -> float:
    return loss.prox_query(query)
