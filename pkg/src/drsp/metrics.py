"""Consensus error, Moreau proximal map and the near-stationarity measure."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import geometry as geo


def consensus_error(M, points):
    """(1/N) sum_i ||X_i - X_hat||^2 with X_hat the induced arithmetic mean."""
    P = np.asarray(points, dtype=float)
    X_hat = geo.induced_arithmetic_mean(M, P)
    return float(np.sum((P - X_hat) ** 2) / P.shape[0])


def default_lambda(problem, X=None):
    """0.5 / (rho + 6 kappa_g L), half the largest admissible envelope parameter."""
    return 0.5 / (problem.rho + 6.0 * problem.kappa * problem.lipschitz_bound(X))


class MoreauResult(NamedTuple):
    point: np.ndarray
    certificate: float
    iterations: int
    stalled: bool
    envelope_value: float


def moreau_prox(problem, X, lam, max_iter=2000, stall_window=50, stall_tol=1e-10):
    """Approximate P_{lam f}(X) = argmin_Y f(Y) + ||Y - X||^2 / (2 lam) over M.

    Riemannian subgradient descent started at X with steps lam / (j + 1);
    returns the best iterate. The certificate is the length of the last step
    taken, which is ``lam / (j + 1)`` times the envelope subgradient norm.
    ``stalled`` is False when the budget ran out before the best value
    settled (relative change below ``stall_tol`` over ``stall_window`` steps).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    M = problem.manifold
    X = geo.check_point(M, X)
    Y = X.copy()
    fY, gY = problem.value_and_subgradient(Y)
    best, best_val = Y, fY
    history = [best_val]
    cert = 0.0
    stalled = False
    j = 0
    for j in range(max_iter):
        g = geo.tangent_project(M, Y, gY + (Y - X) / lam)
        step = lam / (j + 1)
        cert = step * float(np.linalg.norm(g))
        if cert == 0.0:
            stalled = True
            break
        Y = geo.retract(M, Y, -step * g)
        fY, gY = problem.value_and_subgradient(Y)
        val = fY + float(np.sum((Y - X) ** 2)) / (2.0 * lam)
        if val < best_val:
            best, best_val = Y, val
        history.append(best_val)
        if len(history) > stall_window:
            old = history[-stall_window - 1]
            if abs(old - best_val) <= stall_tol * max(1.0, abs(old)):
                stalled = True
                break
    return MoreauResult(best, cert, j + 1, stalled, best_val)


@dataclass(frozen=True)
class StationarityReport:
    lam: float
    prox_point: np.ndarray
    measure: float
    consensus_term: float
    inner_certificate: float
    envelope_value: float
    inner_stalled: bool

    def is_stationary(self, eps):
        """Both near-stationarity terms at most ``eps``."""
        return self.measure <= eps and self.consensus_term <= eps

    def to_json(self):
        return {
            "lambda": self.lam,
            "measure": self.measure,
            "consensus_term": self.consensus_term,
            "inner_certificate": self.inner_certificate,
            "envelope_value": self.envelope_value,
            "inner_stalled": self.inner_stalled,
        }


def stationarity_measure(problem, points, lam=None, **inner):
    """Moreau-envelope stationarity at the IAM together with the consensus term."""
    M = problem.manifold
    P = np.asarray(points, dtype=float)
    if P.ndim == len(M.shape):
        P = P[None]
    X_hat = geo.induced_arithmetic_mean(M, P)
    if lam is None:
        lam = default_lambda(problem, X_hat)
    res = moreau_prox(problem, X_hat, lam, **inner)
    measure = float(np.sum((res.point - X_hat) ** 2)) / lam**2
    cons = float(np.sum((P - X_hat) ** 2) / P.shape[0])
    return StationarityReport(
        lam, res.point, measure, cons, res.certificate, res.envelope_value, res.stalled
    )


class RateFit(NamedTuple):
    slope: float
    ci_low: float
    ci_high: float
    n_used: int
    n_filtered: int


def rate_fit(series, x_transform=None, tail=0.5, confidence=0.95):
    """Least-squares slope of log(value) against log(x_transform(k)) over the tail.

    ``series`` is a sequence of (k, value) pairs. Points with nonpositive value
    or transformed abscissa are dropped and counted in ``n_filtered``.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[0] < 10:
        raise ValueError("rate_fit needs at least 10 (k, value) points")
    k, val = data[:, 0], data[:, 1]
    x = k if x_transform is None else np.array([x_transform(t) for t in k], dtype=float)
    start = int(math.floor(len(k) * (1.0 - tail)))
    x, val = x[start:], val[start:]
    keep = (val > 0) & (x > 0) & np.isfinite(val)
    n_filtered = int(np.sum(~keep))
    if np.sum(keep) < 3:
        raise ValueError("fewer than 3 usable points after filtering")
    if n_filtered:
        warnings.warn(f"rate_fit dropped {n_filtered} nonpositive points", stacklevel=2)
    lx, ly = np.log(x[keep]), np.log(val[keep])
    fit = stats.linregress(lx, ly)
    n = int(np.sum(keep))
    half = stats.t.ppf(0.5 + confidence / 2, n - 2) * fit.stderr if n > 2 else float("inf")
    return RateFit(float(fit.slope), float(fit.slope - half), float(fit.slope + half), n, n_filtered)


def running_min(values):
    return np.minimum.accumulate(np.asarray(values, dtype=float))
