"""Embedded-submanifold geometry.

Points and tangent vectors are plain numpy arrays in ambient coordinates:
vectors of shape ``(n,)`` on spheres and Euclidean spaces, matrices of shape
``(n, p)`` on (generalized) Stiefel manifolds, and flat concatenations of the
factors (matrix factors flattened column-major) on product manifolds. The
manifold objects are immutable descriptions; every operation is a pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import (
    DegenerateRetractionError,
    FeasibilityError,
    InvalidManifoldError,
    NonconvergenceError,
    ProjectionUndefinedError,
    ShapeError,
    UnsupportedManifoldError,
)

FEAS_TOL = 1e-8


def _sym(A):
    return 0.5 * (A + A.T)


def _inv_sqrt_spd(G):
    w, Q = np.linalg.eigh(G)
    return (Q / np.sqrt(w)) @ Q.T


class Manifold:
    """Common interface; concrete manifolds override the underscored hooks."""

    shape: tuple

    @property
    def ambient_dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def residual(self, X) -> float:
        raise NotImplementedError

    def tangent_residual(self, X, eta) -> float:
        raise NotImplementedError

    def _tangent_project(self, X, xi):
        raise NotImplementedError

    def _retract(self, X, eta):
        raise NotImplementedError

    def _project(self, Z):
        raise NotImplementedError

    def _random_point(self, rng):
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Manifold):
    """Sphere of radius ``radius`` in R^n."""

    n: int
    radius: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidManifoldError("sphere dimension must be >= 1")
        if not self.radius > 0:
            raise InvalidManifoldError("sphere radius must be positive")

    @property
    def shape(self):
        return (self.n,)

    @property
    def dim(self):
        return self.n - 1

    def residual(self, X):
        return abs(float(np.linalg.norm(X)) - self.radius)

    def tangent_residual(self, X, eta):
        return abs(float(X @ eta))

    def _tangent_project(self, X, xi):
        return xi - (X @ xi) / self.radius**2 * X

    def _retract(self, X, eta):
        Y = X + eta
        nrm = np.linalg.norm(Y)
        if nrm == 0.0:
            raise DegenerateRetractionError("x + eta vanishes; normalization undefined")
        return self.radius * Y / nrm

    def _project(self, Z):
        nrm = np.linalg.norm(Z)
        if nrm <= 1e-300:
            raise ProjectionUndefinedError("cannot project the origin onto a sphere")
        return self.radius * Z / nrm

    def _random_point(self, rng):
        return self._project(rng.standard_normal(self.n))


@dataclass(frozen=True)
class Stiefel(Manifold):
    """Orthonormal n-by-p frames, X^T X = I_p."""

    n: int
    p: int

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise InvalidManifoldError(f"Stiefel needs 1 <= p <= n, got n={self.n}, p={self.p}")

    @property
    def shape(self):
        return (self.n, self.p)

    @property
    def dim(self):
        return self.n * self.p - self.p * (self.p + 1) // 2

    def residual(self, X):
        return float(np.linalg.norm(X.T @ X - np.eye(self.p)))

    def tangent_residual(self, X, eta):
        A = X.T @ eta
        return float(np.linalg.norm(A + A.T))

    def _tangent_project(self, X, xi):
        return xi - X @ _sym(X.T @ xi)

    def _retract(self, X, eta):
        return self._project(X + eta)

    def _project(self, Z):
        U, s, Vt = np.linalg.svd(Z, full_matrices=False)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise ProjectionUndefinedError("rank-deficient matrix has no unique polar factor")
        return U @ Vt

    def _random_point(self, rng):
        return self._project(rng.standard_normal(self.shape))


@dataclass(frozen=True, eq=False)
class GeneralizedStiefel(Manifold):
    """Frames with X^T B X = I_p for a symmetric positive-definite B."""

    n: int
    p: int
    B: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise InvalidManifoldError(f"generalized Stiefel needs 1 <= p <= n, got n={self.n}, p={self.p}")
        B = np.asarray(self.B, dtype=float)
        if B.shape != (self.n, self.n):
            raise ShapeError(f"B must be {self.n}x{self.n}, got {B.shape}")
        if np.max(np.abs(B - B.T)) > 1e-10 * max(1.0, np.max(np.abs(B))):
            raise InvalidManifoldError("B must be symmetric")
        if np.linalg.eigvalsh(B)[0] <= 1e-10:
            raise InvalidManifoldError("B must be positive definite")
        B = _sym(B)
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "_B2", B @ B)

    @property
    def shape(self):
        return (self.n, self.p)

    @property
    def dim(self):
        return self.n * self.p - self.p * (self.p + 1) // 2

    def residual(self, X):
        return float(np.linalg.norm(X.T @ self.B @ X - np.eye(self.p)))

    def tangent_residual(self, X, eta):
        A = X.T @ self.B @ eta
        return float(np.linalg.norm(A + A.T))

    def _tangent_project(self, X, xi):
        # Normal space is {B X S : S symmetric}; S solves
        # (X^T B^2 X) S + S (X^T B^2 X) = 2 sym(X^T B xi).
        BX = self.B @ X
        G = X.T @ self._B2 @ X
        S = sla.solve_continuous_lyapunov(G, 2.0 * _sym(BX.T @ xi))
        return xi - BX @ _sym(S)

    def _retract(self, X, eta):
        Y = X + eta
        G = Y.T @ self.B @ Y
        return Y @ _inv_sqrt_spd(_sym(G))

    def _project(self, Z, tol=1e-13, max_iter=500):
        G = _sym(Z.T @ self.B @ Z)
        w = np.linalg.eigvalsh(G)
        if w[0] <= 1e-12 * max(w[-1], 1e-300):
            raise ProjectionUndefinedError("Z^T B Z is singular; B-polar factor undefined")
        # B-polar start, then Riemannian gradient steps on 0.5 ||Y - Z||^2.
        Y = Z @ _inv_sqrt_spd(G)
        scale = max(1.0, float(np.linalg.norm(Z)))
        for _ in range(max_iter):
            g = self._tangent_project(Y, Y - Z)
            if np.linalg.norm(g) <= tol * scale:
                return Y
            Y = self._retract(Y, -g)
        raise NonconvergenceError("generalized Stiefel projection did not converge")

    def _random_point(self, rng):
        Z = rng.standard_normal(self.shape)
        return Z @ _inv_sqrt_spd(_sym(Z.T @ self.B @ Z))


@dataclass(frozen=True)
class Euclidean(Manifold):
    d: int

    @property
    def shape(self):
        return (self.d,)

    @property
    def dim(self):
        return self.d

    def residual(self, X):
        return 0.0

    def tangent_residual(self, X, eta):
        return 0.0

    def _tangent_project(self, X, xi):
        return np.array(xi, dtype=float, copy=True)

    def _retract(self, X, eta):
        return X + eta

    def _project(self, Z):
        return np.array(Z, dtype=float, copy=True)

    def _random_point(self, rng):
        return rng.standard_normal(self.d)


@dataclass(frozen=True)
class Product(Manifold):
    """Cartesian product; points are flat concatenations of the factors."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise InvalidManifoldError("product manifold needs at least one factor")
        object.__setattr__(self, "factors", factors)

    @property
    def shape(self):
        return (sum(f.ambient_dim for f in self.factors),)

    @property
    def dim(self):
        return sum(f.dim for f in self.factors)

    def split(self, X):
        parts, start = [], 0
        for f in self.factors:
            stop = start + f.ambient_dim
            parts.append(np.reshape(X[start:stop], f.shape, order="F"))
            start = stop
        return parts

    def join(self, parts):
        return np.concatenate([np.ravel(p, order="F") for p in parts])

    def residual(self, X):
        return max(f.residual(x) for f, x in zip(self.factors, self.split(X)))

    def tangent_residual(self, X, eta):
        return max(
            f.tangent_residual(x, e)
            for f, x, e in zip(self.factors, self.split(X), self.split(eta))
        )

    def _tangent_project(self, X, xi):
        return self.join(
            [f._tangent_project(x, e) for f, x, e in zip(self.factors, self.split(X), self.split(xi))]
        )

    def _retract(self, X, eta):
        return self.join(
            [f._retract(x, e) for f, x, e in zip(self.factors, self.split(X), self.split(eta))]
        )

    def _project(self, Z):
        return self.join([f._project(z) for f, z in zip(self.factors, self.split(Z))])

    def _random_point(self, rng):
        return self.join([f._random_point(rng) for f in self.factors])


def _as_ambient(M, A, what="point"):
    A = np.asarray(A, dtype=float)
    if A.shape != M.shape:
        raise ShapeError(f"{what} has shape {A.shape}, manifold expects {M.shape}")
    return A


def feasibility_residual(M, X):
    return M.residual(_as_ambient(M, X))


def check_point(M, X, tol=FEAS_TOL):
    X = _as_ambient(M, X)
    res = M.residual(X)
    if not res <= tol:
        raise FeasibilityError(f"point violates the manifold constraint by {res:.3e}")
    return X


def is_tangent(M, X, eta, tol=FEAS_TOL):
    return M.tangent_residual(X, _as_ambient(M, eta, "tangent")) <= tol


def tangent_project(M, X, xi):
    """Orthogonal projection of an ambient vector onto T_X M."""
    X = check_point(M, X)
    return M._tangent_project(X, _as_ambient(M, xi, "ambient vector"))


def normal_project(M, X, xi):
    X = check_point(M, X)
    xi = _as_ambient(M, xi, "ambient vector")
    return xi - M._tangent_project(X, xi)


def retract(M, X, eta):
    """Projection-like retraction R_X(eta); R_X(0) returns X unchanged."""
    X = check_point(M, X)
    eta = _as_ambient(M, eta, "tangent")
    if not np.any(eta):
        return X.copy()
    return M._retract(X, eta)


def project_to_manifold(M, Z):
    """Euclidean metric projection of an ambient point onto M."""
    return M._project(_as_ambient(M, Z, "ambient point"))


def random_point(M, rng):
    return M._random_point(rng)


def random_tangent(M, X, rng, norm=1.0):
    eta = M._tangent_project(X, rng.standard_normal(M.shape))
    nrm = np.linalg.norm(eta)
    if nrm == 0.0:
        return eta
    return eta * (norm / nrm)


def second_fundamental_form(M, X, eta):
    """Pi(eta, eta): the ambient acceleration of the geodesic through X with velocity eta."""
    X = check_point(M, X)
    eta = _as_ambient(M, eta, "tangent")
    if isinstance(M, Sphere):
        return -(eta @ eta) / M.radius**2 * X
    if isinstance(M, Stiefel):
        return -X @ (eta.T @ eta)
    if isinstance(M, Euclidean):
        return np.zeros_like(eta)
    if isinstance(M, Product):
        return M.join(
            [second_fundamental_form(f, x, e) for f, x, e in zip(M.factors, M.split(X), M.split(eta))]
        )
    raise UnsupportedManifoldError(f"no closed-form second fundamental form for {type(M).__name__}")


def curvature_bound(M) -> float:
    """Closed-form geodesic curvature bound kappa_g.

    Products take the largest factor bound, which is conservative since a
    geodesic's acceleration splits into the factors' accelerations with
    squared speeds summing to the total.
    """
    if isinstance(M, Sphere):
        return 1.0 / M.radius
    if isinstance(M, Stiefel):
        return 1.0
    if isinstance(M, Euclidean):
        return 0.0
    if isinstance(M, Product):
        return max(curvature_bound(f) for f in M.factors)
    raise UnsupportedManifoldError(
        f"no closed-form curvature bound for {type(M).__name__}; use estimate_curvature_bound"
    )


def estimate_curvature_bound(M, samples, rng, t=1e-3) -> float:
    """Sampled estimate of kappa_g from second differences of the retraction.

    For each sample (X, unit eta) the central second difference
    (R_X(t eta) - 2X + R_X(-t eta)) / t^2 approximates the acceleration of the
    retraction curve; its normal component is Pi(eta, eta) for any
    retraction, so that component is measured. Samples are drawn
    sequentially, so the running maximum is nondecreasing in ``samples``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    best = 0.0
    for _ in range(samples):
        X = M._random_point(rng)
        eta = random_tangent(M, X, rng)
        if not np.any(eta):
            continue
        acc = (M._retract(X, t * eta) - 2.0 * X + M._retract(X, -t * eta)) / t**2
        acc = acc - M._tangent_project(X, acc)
        best = max(best, float(np.linalg.norm(acc)))
    return best


def euclidean_mean(points):
    P = np.asarray(points, dtype=float)
    if P.shape[0] == 0:
        raise ValueError("need at least one point")
    return P.mean(axis=0)


def induced_arithmetic_mean(M, points):
    """Manifold point minimizing the sum of squared distances to ``points``.

    Computed as the metric projection of the Euclidean mean, which is the
    induced arithmetic mean while the mean stays within the projection's
    uniqueness tube.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == len(M.shape):
        P = P[None]
    if P.shape[0] == 0:
        raise ValueError("need at least one point")
    for X in P:
        check_point(M, X)
    if np.all(P == P[0]):
        return P[0].copy()
    return project_to_manifold(M, P.mean(axis=0))


class Distance(NamedTuple):
    value: float
    surrogate: bool


def riemannian_distance(M, X, Y) -> Distance:
    """Geodesic distance where closed-form; otherwise the chord, flagged as a surrogate."""
    X = _as_ambient(M, X)
    Y = _as_ambient(M, Y)
    if isinstance(M, Sphere):
        c = np.clip((X @ Y) / M.radius**2, -1.0, 1.0)
        return Distance(M.radius * float(np.arccos(c)), False)
    if isinstance(M, Euclidean):
        return Distance(float(np.linalg.norm(X - Y)), False)
    if isinstance(M, Product):
        parts = [riemannian_distance(f, x, y) for f, x, y in zip(M.factors, M.split(X), M.split(Y))]
        return Distance(
            float(np.sqrt(sum(d.value**2 for d in parts))), any(d.surrogate for d in parts)
        )
    return Distance(float(np.linalg.norm(X - Y)), True)


class RetractionConstants(NamedTuple):
    M1: float
    M2: float


def fit_retraction_constants(M, samples, rng, max_norm=0.5) -> RetractionConstants:
    """Empirical constants with ||R_X(eta) - X|| <= M1 ||eta|| and
    ||R_X(eta) - (X + eta)|| <= M2 ||eta||^2 over ||eta|| <= max_norm."""
    M1 = M2 = 0.0
    for _ in range(samples):
        X = M._random_point(rng)
        r = max_norm * float(rng.uniform(0.01, 1.0))
        eta = random_tangent(M, X, rng, norm=r)
        R = M._retract(X, eta)
        M1 = max(M1, float(np.linalg.norm(R - X)) / r)
        M2 = max(M2, float(np.linalg.norm(R - X - eta)) / r**2)
    return RetractionConstants(M1, M2)


def to_json(M) -> dict:
    """Serializable description of a manifold (used in run manifests)."""
    if isinstance(M, Sphere):
        return {"kind": "sphere", "n": M.n, "radius": M.radius}
    if isinstance(M, Stiefel):
        return {"kind": "stiefel", "n": M.n, "p": M.p}
    if isinstance(M, GeneralizedStiefel):
        return {"kind": "generalized_stiefel", "n": M.n, "p": M.p, "B": M.B.tolist()}
    if isinstance(M, Euclidean):
        return {"kind": "euclidean", "d": M.d}
    if isinstance(M, Product):
        return {"kind": "product", "factors": [to_json(f) for f in M.factors]}
    raise UnsupportedManifoldError(type(M).__name__)


def stack(points: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(p, dtype=float) for p in points])
