"""Brute-force and finite-difference references for tests and probes.

Nothing on the algorithm path imports this module. Tangent spaces here come
from the null space of the linearized constraints rather than from the
geometry module's projectors, and model values are re-derived from the
problem data, so a regression in :mod:`drsp.models` or the projectors cannot
silently move the reference along with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import ndimage

from . import geometry as geo
from .errors import GeometryError


@dataclass(frozen=True)
class TangentBasis:
    base: np.ndarray
    vectors: np.ndarray  # shape (d, *ambient_shape)

    @property
    def dim(self):
        return self.vectors.shape[0]

    def matrix(self):
        """Basis as columns of an (ambient_dim, d) matrix, column-major flattening."""
        return np.stack([np.ravel(v, order="F") for v in self.vectors], axis=1)

    def combine(self, coeffs):
        """Ambient tangent vectors sum_k c_k u_k for one or many coefficient rows."""
        return np.tensordot(coeffs, self.vectors, axes=(-1, 0))


def _constraint_jacobian(M, X):
    """Rows span the linearized constraints: eta is tangent iff J vec(eta) = 0."""
    if isinstance(M, geo.Sphere):
        return X[None, :].copy()
    if isinstance(M, (geo.Stiefel, geo.GeneralizedStiefel)):
        n, p = M.shape
        BX = M.B @ X if isinstance(M, geo.GeneralizedStiefel) else X
        rows = []
        # (X^T B eta)_ij + (X^T B eta)_ji = 0 for i <= j
        for i in range(p):
            for j in range(i, p):
                E = np.zeros((n, p))
                E[:, j] += BX[:, i]
                E[:, i] += BX[:, j]
                rows.append(E.ravel(order="F"))
        return np.array(rows)
    if isinstance(M, geo.Euclidean):
        return np.zeros((0, M.d))
    if isinstance(M, geo.Product):
        blocks = [_constraint_jacobian(f, x) for f, x in zip(M.factors, M.split(X))]
        return sla.block_diag(*blocks) if blocks else np.zeros((0, M.ambient_dim))
    raise GeometryError(f"no constraint Jacobian for {type(M).__name__}")


def tangent_basis(M, X, tol=1e-8):
    """Orthonormal basis of T_X M from the null space of the constraint Jacobian."""
    X = geo.check_point(M, X)
    J = _constraint_jacobian(M, X)
    if J.shape[0] == 0:
        Nul = np.eye(M.ambient_dim)
    else:
        Nul = sla.null_space(J, rcond=tol)
    if Nul.shape[1] != M.dim:
        raise GeometryError(f"tangent basis has {Nul.shape[1]} vectors, expected {M.dim}")
    vecs = np.stack([np.reshape(Nul[:, k], M.shape, order="F") for k in range(Nul.shape[1])])
    return TangentBasis(X, vecs)


# --------------------------------------------------------------------------
# brute-force prox


def _batched_objective(kind, problem, X, payload, beta, V, U):
    """Prox objective at displacements V (batch, *shape); U is the tangent basis."""
    from .models import ModelKind

    kind = ModelKind.parse(kind)
    sq = 0.5 * beta * np.sum(V.reshape(V.shape[0], -1) ** 2, axis=1)
    s = problem.structure
    if s == "bilinear_abs":
        a, c, b = payload
        n = problem.n
        x, y = X[:n], X[n:]
        ax, cy = a @ x, c @ y
        if kind is ModelKind.PROXIMAL_POINT:
            return np.abs((ax + V[:, :n] @ a) * (cy + V[:, n:] @ c) - b) + sq
        g = np.concatenate([cy * a, ax * c])
        if kind is ModelKind.PROX_LINEAR:
            return np.abs(ax * cy - b + V @ g) + sq
        G = U.combine(U.vectors.reshape(U.dim, -1) @ (np.sign(ax * cy - b) * g))
        return abs(ax * cy - b) + V @ G + sq
    if s == "l1_linear":
        y = payload
        if kind is ModelKind.SUBGRADIENT:
            g = np.outer(y, np.sign(y @ X))
            G = U.combine(U.vectors.reshape(U.dim, -1) @ g.ravel())
            return np.sum(np.abs(y @ X)) + np.einsum("bij,ij->b", V, G) + sq
        return np.sum(np.abs(np.einsum("i,bij->bj", y, X[None] + V)), axis=1) + sq
    if s == "quadratic":
        As = payload
        m = As.shape[0]
        if kind is ModelKind.SUBGRADIENT:
            g = -(As.T @ (As @ X)) / m
            G = U.combine(U.vectors.reshape(U.dim, -1) @ g.ravel())
            return -0.5 * np.sum((As @ X) ** 2) / m + np.einsum("bij,ij->b", V, G) + sq
        AV = np.einsum("ki,bij->bkj", As, X[None] + V)
        return -0.5 * np.sum(AV.reshape(V.shape[0], -1) ** 2, axis=1) / m + sq
    raise ValueError(f"no oracle objective for structure {s!r}")


def default_half_width(kind, problem, X, payload, beta):
    """A radius that provably contains the prox solution, derived independently.

    Nonnegative models: beta/2 ||v||^2 <= F(X) gives ||v|| <= sqrt(2 F(X) / beta).
    Linear model: F(X) + <G, v> + beta/2 ||v||^2 <= F(X) gives ||v|| <= 2 ||G|| / beta.
    Quadratic (GEVP) proximal point: ||v|| <= lambda_max ||X|| / (beta - lambda_max).
    """
    from .models import ModelKind

    kind = ModelKind.parse(kind)
    if kind is ModelKind.SUBGRADIENT:
        g = problem.sample_subgradient(X, payload)
        return 2.0 * float(np.linalg.norm(g)) / beta + 1e-12
    if problem.structure == "quadratic":
        H = payload.T @ payload / payload.shape[0]
        lmax = float(np.linalg.eigvalsh(H)[-1])
        if beta <= lmax:
            raise ValueError("beta must exceed the sampled curvature")
        return lmax * float(np.linalg.norm(X)) / (beta - lmax) + 1e-12
    return math.sqrt(2.0 * problem.sample_loss(X, payload) / beta) + 1e-12


def brute_prox(
    kind, problem, X, xi, beta, grid_half_width=None, resolution=1e-3, points=None, max_grid=600_000,
    max_moves=200, starts=8,
):
    """Grid minimization of the prox objective over tangent coefficients.

    A ``points``-per-axis grid covers the coefficient box. The grid is
    recentred on its best point until that point is the centre itself, so
    the search can travel along narrow valleys (kinks of |.|); only then is
    the box shrunk to two cells around the incumbent (the lattice is rotated
    at random between moves, see ``_refine``). This repeats until the
    cell size drops below ``resolution``. Because the sampled proximal-point
    model can be nonconvex, refinement starts from up to ``starts`` local
    minima of the first full-box grid and the best result wins. ``points`` defaults to the largest
    odd count whose full grid stays within ``max_grid``.
    """
    payload = getattr(xi, "payload", xi)
    U = tangent_basis(problem.manifold, X)
    d = U.dim
    if points is None:
        points = 21
        while points > 5 and points**d > max_grid:
            points -= 2
    if points**d > max_grid:
        raise ValueError(f"tangent dimension {d} needs a grid larger than max_grid={max_grid}")
    h0 = default_half_width(kind, problem, X, payload, beta) if grid_half_width is None else grid_half_width
    axis0 = np.linspace(-1.0, 1.0, points)
    offsets = np.stack(np.meshgrid(*([axis0] * d), indexing="ij"), axis=-1).reshape(-1, d)

    def objective(C):
        return _batched_objective(kind, problem, X, payload, beta, U.combine(C), U)

    # nonconvex models can have several basins: refine from each lattice-local minimum
    vals = objective(h0 * offsets)
    lattice = vals.reshape((points,) * d)
    local = lattice == ndimage.minimum_filter(lattice, size=3, mode="constant", cval=np.inf)
    idx = np.flatnonzero(local.ravel())
    idx = idx[np.argsort(vals[idx])][:starts]
    best_c, best_val = None, np.inf
    for j0 in idx:
        c, val = _refine(objective, h0 * offsets[j0], float(vals[j0]), h0, offsets, points, resolution, max_moves)
        if val < best_val:
            best_c, best_val = c, val
    return U.combine(best_c)


def _refine(objective, c, val, h, offsets, points, resolution, max_moves, patience=4, seed=0):
    """Pattern search: recentre until the centre is best, then shrink the box.

    The lattice is rotated at random between moves; a fixed axis-aligned
    lattice can stall on a kink surface that no lattice direction follows
    closely enough. The box shrinks after ``patience`` rotations in a row
    bring no improvement.
    """
    gen = np.random.default_rng(seed)
    d = offsets.shape[1]
    while True:
        misses = 0
        for _ in range(max_moves):
            Q = np.linalg.qr(gen.standard_normal((d, d)))[0] if d > 1 else np.ones((1, 1))
            grid = c + h * offsets @ Q.T
            vals = objective(grid)
            j = int(np.argmin(vals))
            if vals[j] < val:
                c, val, misses = grid[j], float(vals[j]), 0
            else:
                misses += 1
                if misses >= patience:
                    break
        spacing = 2.0 * h / (points - 1)
        if spacing <= resolution:
            return c, val
        h = 2.0 * spacing


# --------------------------------------------------------------------------
# finite differences


def finite_diff_riemannian_grad(f, M, X, h=1e-6):
    """Central differences of f along retraction curves, assembled in a tangent basis."""
    U = tangent_basis(M, X)
    coeffs = np.empty(U.dim)
    for k, u in enumerate(U.vectors):
        coeffs[k] = (f(geo.retract(M, X, h * u)) - f(geo.retract(M, X, -h * u))) / (2.0 * h)
    return U.combine(coeffs)


# --------------------------------------------------------------------------
# lemma probes


def stiefel_geodesic(X, eta, t=1.0):
    """Embedded-metric geodesic on St(n, p) through X with velocity eta."""
    p = X.shape[1]
    A = X.T @ eta
    S = eta.T @ eta
    blk = np.block([[A, -S], [np.eye(p), A]])
    E = sla.expm(t * blk)
    return np.hstack([X, eta]) @ E[:, :p] @ sla.expm(-t * A)


def _sample_pair(M, rng, max_dist):
    """(X, Y, d) with Y on a geodesic from X and d >= d_M(X, Y) its length."""
    X = geo.random_point(M, rng)
    d = max_dist * float(rng.uniform())
    if isinstance(M, geo.Sphere):
        u = geo.random_tangent(M, X, rng, norm=1.0)
        th = d / M.radius
        return X, math.cos(th) * X + M.radius * math.sin(th) * u, d
    if isinstance(M, geo.Stiefel):
        eta = geo.random_tangent(M, X, rng, norm=d)
        return X, stiefel_geodesic(X, eta), d
    raise ValueError("normal-vector probe supports Sphere and Stiefel only")


def _random_normal(M, X, rng):
    if isinstance(M, geo.Sphere):
        return float(rng.standard_normal()) * X
    G = rng.standard_normal((M.p, M.p))
    return X @ (G + G.T)


def probe_normal_inequality(M, trials, rng):
    """Max violations of the two normal-vector inequalities.

    eq13: <w, Y - X> - kappa ||w|| d^2 / 2 for any Y (d exact on the sphere,
    the geodesic length, an upper bound on d_M, on Stiefel);
    eq14: <w, Y - X> - kappa ||w|| ||Y - X||^2 for Y = Exp_X(eta), ||eta|| <= D.
    """
    kappa = geo.curvature_bound(M)
    D = (2.0 - math.sqrt(2.0)) / kappa
    far = math.pi * (M.radius if isinstance(M, geo.Sphere) else 1.0)
    v13 = v14 = -math.inf
    for j in range(trials):
        X, Y, d = _sample_pair(M, rng, far)
        w = _random_normal(M, X, rng)
        nw = float(np.linalg.norm(w))
        v13 = max(v13, float(np.vdot(w, Y - X)) - 0.5 * kappa * nw * d * d)
        X, Y, d = _sample_pair(M, rng, D)
        w = _random_normal(M, X, rng)
        nw = float(np.linalg.norm(w))
        v14 = max(v14, float(np.vdot(w, Y - X)) - kappa * nw * float(np.sum((Y - X) ** 2)))
    return {
        "trials": trials,
        "max_violation_eq13": v13,
        "max_violation_eq14": v14,
        "passed": v13 <= 1e-9 and v14 <= 1e-9,
    }


def probe_mean_gap(M, trials, rng, n_agents=8, spread=None):
    """Max of ||X_bar - X_hat|| - kappa/N ||X - X_hat||^2 over clouds inside the D-ball."""
    kappa = geo.curvature_bound(M)
    D = (2.0 - math.sqrt(2.0)) / kappa if kappa > 0 else 1.0
    spread = 0.5 * D if spread is None else spread
    worst = -math.inf
    for _ in range(trials):
        C = geo.random_point(M, rng)
        P = np.stack(
            [geo.retract(M, C, geo.random_tangent(M, C, rng, norm=spread * float(rng.uniform())))
             for _ in range(n_agents)]
        )
        X_hat = geo.induced_arithmetic_mean(M, P)
        if max(geo.riemannian_distance(M, X, X_hat).value for X in P) > D:
            continue
        gap = float(np.linalg.norm(P.mean(axis=0) - X_hat))
        bound = kappa / n_agents * float(np.sum((P - X_hat) ** 2))
        worst = max(worst, gap - bound)
    return {"trials": trials, "max_violation": worst, "passed": worst <= 1e-9}
