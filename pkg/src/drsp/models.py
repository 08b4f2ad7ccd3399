"""Stochastic one-sided models and the tangent-space prox subproblem.

For a sample xi and base point X the prox step solves

    v = argmin_{v in T_X M}  F_X(X + v, xi) + (beta / 2) ||v||^2

for one of three models: the linearization (subgradient), the sampled loss
itself (proximal point), or the linearization inside the outer convex
function (prox-linear). Every solver returns a first-order certificate
||beta v + u|| with u a projected model subgradient at X + v.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import NonconvergenceError, ParameterError
from .problems import SampleRealization

__all__ = [
    "ModelKind",
    "ProxResult",
    "SampleRealization",
    "draw_sample",
    "model_value",
    "prox_step",
    "verify_one_sided",
]

PROX_TOL = 1e-8


class ModelKind(enum.Enum):
    SUBGRADIENT = "subgradient"
    PROXIMAL_POINT = "proximal_point"
    PROX_LINEAR = "prox_linear"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {
            "ssg": cls.SUBGRADIENT,
            "dr_ssg": cls.SUBGRADIENT,
            "spp": cls.PROXIMAL_POINT,
            "dr_spp": cls.PROXIMAL_POINT,
            "spl": cls.PROX_LINEAR,
            "dr_spl": cls.PROX_LINEAR,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown model kind {value!r}") from None


@dataclass(frozen=True)
class ProxResult:
    """Prox-step output.

    ``lipschitz`` is the model Lipschitz bound L used for the backward-step
    check ||v|| <= L / beta.
    """

    v: np.ndarray
    objective_value: float
    solver_iterations: int
    certificate: float
    lipschitz: float


def draw_sample(problem, agent, k) -> SampleRealization:
    return problem.draw_sample(agent, k)


def _payload(xi):
    return xi.payload if isinstance(xi, SampleRealization) else xi


# --------------------------------------------------------------------------
# model values


def model_value(kind, problem, X, xi, v):
    """F_X(X + v, xi) for the given model; ``v`` may be any ambient displacement."""
    kind = ModelKind.parse(kind)
    payload = _payload(xi)
    v = np.asarray(v, dtype=float)
    if kind is ModelKind.SUBGRADIENT:
        G = problem.sample_riemannian_subgradient(X, payload)
        return problem.sample_loss(X, payload) + float(np.vdot(G, v))
    if kind is ModelKind.PROXIMAL_POINT:
        return problem.sample_loss(X + v, payload)
    return _prox_linear_value(problem, X, payload, v)


def _prox_linear_value(problem, X, payload, v):
    if problem.structure == "bilinear_abs":
        r, g = _bilinear_linearization(problem, X, payload)
        return abs(r + float(g @ v))
    if problem.structure == "l1_linear":
        # the inner map y^T X is already linear, so the model is exact
        return problem.sample_loss(X + v, payload)
    raise ParameterError(f"prox-linear model needs a convex-composite loss, not {problem.name}")


def _bilinear_linearization(problem, z, payload):
    """Residual r and ambient gradient of q(z) = <a, x><c, y> - b at z."""
    a, c, b = payload
    x, y = problem.split(z)
    ax, cy = a @ x, c @ y
    return float(ax * cy - b), np.concatenate([cy * a, ax * c])


# --------------------------------------------------------------------------
# prox step


def prox_step(kind, problem, X, xi, beta, tol=PROX_TOL) -> ProxResult:
    """Solve the tangent-space prox subproblem for ``kind`` at X."""
    kind = ModelKind.parse(kind)
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    payload = _payload(xi)
    M = problem.manifold
    if kind is ModelKind.SUBGRADIENT:
        G = problem.sample_riemannian_subgradient(X, payload)
        v = -G / beta
        val = problem.sample_loss(X, payload) + float(np.vdot(G, v)) + 0.5 * beta * float(np.vdot(v, v))
        return ProxResult(v, val, 0, 0.0, float(np.linalg.norm(G)))

    structure = problem.structure
    if structure == "bilinear_abs":
        if kind is ModelKind.PROX_LINEAR:
            return _bilinear_prox_linear(problem, X, payload, beta)
        return _bilinear_prox_point(problem, X, payload, beta)
    if structure == "l1_linear":
        # proximal point and prox-linear coincide for a linear inner map
        return _l1_linear_prox(M, X, payload, beta, tol)
    if structure == "quadratic":
        if kind is ModelKind.PROX_LINEAR:
            raise ParameterError("prox-linear model is not defined for the quadratic problem")
        return _quadratic_prox_point(problem, X, payload, beta)
    raise ParameterError(f"no prox solver for structure {structure!r}")


def _abs_certificate(beta, v, q, g, scale):
    """||beta v + theta g|| with theta in d|.|(q), chosen optimally when q ~ 0."""
    gg = float(g @ g)
    if abs(q) > 1e-12 * scale:
        theta = math.copysign(1.0, q)
    elif gg > 0:
        theta = float(np.clip(-beta * float(v @ g) / gg, -1.0, 1.0))
    else:
        theta = 0.0
    return float(np.linalg.norm(beta * v + theta * g))


def _bilinear_prox_linear(problem, z, payload, beta):
    M = problem.manifold
    r, g_amb = _bilinear_linearization(problem, z, payload)
    g = geo.tangent_project(M, z, g_amb)
    gg = float(g @ g)
    if gg == 0.0:
        v = np.zeros_like(z)
    else:
        # minimize |r + <g, v>| + beta/2 ||v||^2 along g: a clipped Newton step
        v = -float(np.clip(r / gg, -1.0 / beta, 1.0 / beta)) * g
    q = r + float(g @ v)
    val = abs(q) + 0.5 * beta * float(v @ v)
    cert = _abs_certificate(beta, v, q, g, max(1.0, abs(r)))
    return ProxResult(v, val, 0, cert, math.sqrt(gg))


def _bilinear_prox_point(problem, z, payload, beta):
    """Global minimizer of |<a, x+v1><c, y+v2> - b| + beta/2 (||v1||^2 + ||v2||^2).

    Components orthogonal to a_T = P_x a (in v1) or to c (in v2) only add
    cost, so v1 = s a_T/A and v2 = u c/C with A = ||a_T||, C = ||c||, and the
    problem reduces to two variables:

        phi(s, u) = |(alpha + A s)(gamma + C u) - b| + beta/2 (s^2 + u^2).

    Its minimizer is either a stationary point of a smooth branch (a 2x2
    linear system per sign) or the closest point of the zero set
    (alpha + A s)(gamma + C u) = b, whose stationarity condition is a quartic.
    All candidates are enumerated and the best is returned, which is exact
    even when beta <= rho and the subproblem is nonconvex.
    """
    a, c, b = payload
    x, y = problem.split(z)
    alpha, gamma = float(a @ x), float(c @ y)
    a_t = a - (a @ x) * x
    A, C = float(np.linalg.norm(a_t)), float(np.linalg.norm(c))

    def phi(s, u):
        return abs((alpha + A * s) * (gamma + C * u) - b) + 0.5 * beta * (s * s + u * u)

    cands = [(0.0, 0.0)]
    if A == 0.0 or C == 0.0:
        # one block is inert: 1-D problem |r + g t| + beta/2 t^2
        r = alpha * gamma - b
        if C > 0.0:
            g = alpha * C
            if g != 0.0:
                cands.append((0.0, -float(np.clip(r / g**2, -1 / beta, 1 / beta)) * g))
        elif A > 0.0:
            g = gamma * A
            if g != 0.0:
                cands.append((-float(np.clip(r / g**2, -1 / beta, 1 / beta)) * g, 0.0))
    else:
        AC = A * C
        for sigma in (1.0, -1.0):
            H = np.array([[beta, sigma * AC], [sigma * AC, beta]])
            rhs = np.array([-sigma * A * gamma, -sigma * C * alpha])
            if abs(np.linalg.det(H)) > 1e-14 * beta * beta:
                s, u = np.linalg.solve(H, rhs)
                cands.append((float(s), float(u)))
        if b == 0.0:
            cands += [(-alpha / A, 0.0), (0.0, -gamma / C)]
        else:
            coeffs = [C * C, -alpha * C * C, 0.0, A * A * gamma * b, -A * A * b * b]
            for P in np.roots(coeffs):
                if abs(P.imag) <= 1e-8 * max(1.0, abs(P)) and P.real != 0.0:
                    P = float(P.real)
                    cands.append(((P - alpha) / A, (b / P - gamma) / C))
    s, u = min(cands, key=lambda su: phi(*su))

    v1 = s * a_t / A if A > 0 else np.zeros_like(x)
    v2 = u * c / C if C > 0 else np.zeros_like(y)
    v = np.concatenate([v1, v2])

    ax, cy = alpha + A * s, gamma + C * u
    q = ax * cy - b
    g = geo.tangent_project(problem.manifold, z, np.concatenate([cy * a, ax * c]))
    cert = _abs_certificate(beta, v, q, g, max(1.0, abs(b), abs(alpha * gamma)))
    r = math.hypot(s, u)
    lip = A * (abs(gamma) + C * r) + C * (abs(alpha) + A * r)
    return ProxResult(v, phi(s, u), len(cands), cert, lip)


def _l1_linear_prox(M, X, y, beta, tol):
    """min_{v in T_X} ||y^T (X + v)||_1 + beta/2 ||v||^2 through its dual.

    With L v = v^T y and adjoint L* s = P_T(y s^T) the dual is the box QP

        min_{s in [-1, 1]^p}  (1/2 beta) s^T Q s - z0^T s,

    Q = L L*, z0 = X^T y, and the primal solution is v = -L* s / beta.
    """
    p = X.shape[1]
    K = np.stack([geo.tangent_project(M, X, np.outer(y, e)).ravel() for e in np.eye(p)])
    Q = K @ K.T
    z0 = y @ X
    s, iters = _box_qp(Q / beta, z0)
    v = -(s @ K).reshape(X.shape) / beta
    z = z0 + y @ v
    val = float(np.sum(np.abs(z))) + 0.5 * beta * float(np.vdot(v, v))

    # first-order certificate: pick u in d||.||_1(z) consistent with the dual
    zscale = 1e-12 * max(1.0, float(np.max(np.abs(z0))))
    u = np.where(np.abs(z) > zscale, np.sign(z), np.clip(s, -1.0, 1.0))
    cert = float(np.linalg.norm(beta * v.ravel() + u @ K))
    if cert > 100 * tol * max(1.0, beta):
        raise NonconvergenceError(f"l1 prox certificate {cert:.3e} above tolerance")
    lip = float(np.linalg.norm(y) * math.sqrt(p))
    return ProxResult(v, val, iters, cert, lip)


def _box_qp(H, q, max_iter=100):
    """min 1/2 s^T H s - q^T s over the box [-1, 1]^p (H symmetric PSD).

    Primal-dual active set iterations; falls back to accelerated projected
    gradient if the active set cycles.
    """
    p = q.size
    s = np.clip(np.linalg.lstsq(H, q, rcond=None)[0], -1.0, 1.0)
    c = 1.0 / max(float(np.max(np.diag(H))), 1e-300)
    prev = None
    for it in range(1, max_iter + 1):
        lam = q - H @ s
        trial = s + c * lam
        up, lo = trial > 1.0, trial < -1.0
        key = (up.tobytes(), lo.tobytes())
        if key == prev:
            if _box_kkt(H, q, s) <= 1e-12 * max(1.0, float(np.max(np.abs(q)))):
                return s, it
            break
        prev = key
        free = ~(up | lo)
        s_new = np.where(up, 1.0, np.where(lo, -1.0, 0.0))
        if np.any(free):
            rhs = q[free] - H[np.ix_(free, ~free)] @ s_new[~free]
            s_new[free] = np.linalg.lstsq(H[np.ix_(free, free)], rhs, rcond=None)[0]
        s = s_new
    return _box_qp_fista(H, q, np.clip(s, -1.0, 1.0))


def _box_kkt(H, q, s):
    return float(np.linalg.norm(s - np.clip(s + (q - H @ s), -1.0, 1.0)))


def _box_qp_fista(H, q, s0, max_iter=20000):
    Lh = max(float(np.linalg.eigvalsh(H)[-1]), 1e-300)
    s = w = s0
    t = 1.0
    for it in range(1, max_iter + 1):
        s_new = np.clip(w + (q - H @ w) / Lh, -1.0, 1.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        w = s_new + ((t - 1.0) / t_new) * (s_new - s)
        s, t = s_new, t_new
        if _box_kkt(H, q, s) <= 1e-14 * max(1.0, float(np.max(np.abs(q)))):
            break
    # polish on the identified active set
    lam = q - H @ s
    up = (s >= 1.0 - 1e-9) & (lam > 0)
    lo = (s <= -1.0 + 1e-9) & (lam < 0)
    free = ~(up | lo)
    s_pol = np.where(up, 1.0, np.where(lo, -1.0, s))
    if np.any(free):
        rhs = q[free] - H[np.ix_(free, ~free)] @ s_pol[~free]
        s_pol[free] = np.linalg.lstsq(H[np.ix_(free, free)], rhs, rcond=None)[0]
    if np.all(np.abs(s_pol) <= 1.0 + 1e-12) and _box_kkt(H, q, s_pol) < _box_kkt(H, q, s):
        s = np.clip(s_pol, -1.0, 1.0)
    return s, max_iter if it == max_iter else it


def _normal_basis(M, X):
    """Orthonormal basis of the normal space {B X S : S symmetric} (column-major vec)."""
    n, p = M.shape
    BX = M.B @ X if isinstance(M, geo.GeneralizedStiefel) else X
    cols = []
    for i in range(p):
        for j in range(i, p):
            S = np.zeros((p, p))
            S[i, j] = S[j, i] = 1.0
            cols.append((BX @ S).ravel(order="F"))
    Nb, _ = np.linalg.qr(np.array(cols).T)
    return Nb


def _quadratic_prox_point(problem, X, As, beta):
    """min_{v in T_X} -1/(2b) ||As (X + v)||^2 + beta/2 ||v||^2 (a linear solve)."""
    M = problem.manifold
    n, p = M.shape
    H = As.T @ As / As.shape[0]
    Nb = _normal_basis(M, X)
    Qf, _ = np.linalg.qr(Nb, mode="complete")
    U = Qf[:, Nb.shape[1] :]
    # (I_p kron H) acting on column-major vec(V)
    HU = np.column_stack([(H @ U[:, k].reshape(n, p, order="F")).ravel(order="F") for k in range(U.shape[1])])
    Hr = U.T @ HU
    Hr = 0.5 * (Hr + Hr.T)
    w = np.linalg.eigvalsh(Hr)
    if beta <= w[-1]:
        raise ParameterError(
            f"beta={beta:.4g} does not exceed the sampled curvature {w[-1]:.4g}; "
            "the proximal-point subproblem is unbounded"
        )
    rhs = U.T @ (H @ X).ravel(order="F")
    c = np.linalg.solve(beta * np.eye(U.shape[1]) - Hr, rhs)
    v = (U @ c).reshape(n, p, order="F")
    v = geo.tangent_project(M, X, v)
    Y = X + v
    val = -0.5 * float(np.sum((As @ Y) ** 2)) / As.shape[0] + 0.5 * beta * float(np.vdot(v, v))
    grad = geo.tangent_project(M, X, -(H @ Y))
    cert = float(np.linalg.norm(beta * v + grad))
    lip = float(np.linalg.eigvalsh(H)[-1] * (np.linalg.norm(X) + np.linalg.norm(v)))
    return ProxResult(v, val, 1, cert, lip)


# --------------------------------------------------------------------------
# one-sided accuracy probe


def verify_one_sided(kind, problem, trials, tau_claimed, rng, pairs=5, agent=0, radius=0.3):
    """Monte-Carlo check of E[F_X(Y, xi)] - f(Y) <= tau/2 ||Y - X||^2.

    ``f`` is the agent's deterministic local objective. For each of ``pairs`` random
    (X, Y) with Y a retraction of X, the sample mean over ``trials`` draws is
    compared against the bound plus three standard errors.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kind = ModelKind.parse(kind)
    M = problem.manifold
    rows = []
    for pair in range(pairs):
        X = geo.random_point(M, rng)
        Y = geo.retract(M, X, geo.random_tangent(M, X, rng, norm=radius * float(rng.uniform())))
        d = Y - X
        fY = problem.local_objective(agent, Y)
        vals = np.empty(trials)
        for j in range(trials):
            xi = problem.draw_sample(agent, int(rng.integers(1 << 62)))
            vals[j] = model_value(kind, problem, X, xi, d) - fY
        lhs = float(vals.mean())
        se = float(vals.std(ddof=1)) / math.sqrt(trials) if trials > 1 else 0.0
        rhs = 0.5 * tau_claimed * float(np.vdot(d, d)) + 3.0 * se
        rows.append({"lhs": lhs, "rhs": rhs, "margin": rhs - lhs})
    return {
        "passed": all(r["margin"] >= 0 for r in rows),
        "min_margin": min(r["margin"] for r in rows),
        "pairs": rows,
    }
