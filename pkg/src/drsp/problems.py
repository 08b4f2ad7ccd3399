"""The three experiment families: blind deconvolution, orthogonal dictionary
learning and the top-p generalized eigenvalue problem.

Each problem object bundles a manifold, the per-agent sampling rule, the
ambient sample loss and subgradient, a deterministic full objective used by
the stationarity metrics, and a ground-truth error metric. The ``structure``
attribute tells :mod:`drsp.models` which exact prox solver applies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np
from scipy import linalg as sla

from . import geometry as geo
from . import rng as rngmod
from .errors import ParameterError


@dataclass(frozen=True)
class SampleRealization:
    """One stochastic draw for ``agent`` at iteration ``iteration``."""

    payload: Any
    agent: int
    iteration: int


class Problem:
    """Shared plumbing; subclasses fill in the loss-specific pieces."""

    name = "problem"
    structure = "generic"
    manifold: geo.Manifold
    n_agents: int
    seed: int

    def _sample_stream(self, agent, k, seed=None):
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent {agent} out of range for N={self.n_agents}")
        return rngmod.stream(self.seed if seed is None else seed, rngmod.SAMPLES, agent, k)

    def draw_sample(self, agent, k, seed=None) -> SampleRealization:
        """Sample for ``agent`` at iteration ``k``; a pure function of (seed, agent, k)."""
        gen = self._sample_stream(agent, k, seed)
        return SampleRealization(self._draw(gen, agent), agent, k)

    def value_and_subgradient(self, X):
        """Full objective and an ambient subgradient in one pass."""
        return self.full_objective(X), self.full_subgradient(X)

    def initial_point(self, seed=None):
        """Random feasible point from the INIT stream (shared by every agent)."""
        gen = rngmod.stream(self.seed if seed is None else seed, rngmod.INIT, 0)
        return geo.random_point(self.manifold, gen)

    @cached_property
    def kappa(self):
        """Curvature bound kappa_g: closed form where known, else a sampled estimate."""
        try:
            return geo.curvature_bound(self.manifold)
        except geo.UnsupportedManifoldError:
            gen = rngmod.stream(self.seed, rngmod.DIAGNOSTICS, 0)
            return geo.estimate_curvature_bound(self.manifold, 2000, gen)

    def sample_riemannian_subgradient(self, X, payload):
        return geo.tangent_project(self.manifold, X, self.sample_subgradient(X, payload))

    def full_riemannian_subgradient(self, X):
        return geo.tangent_project(self.manifold, X, self.full_subgradient(X))

    def tau(self, kind):
        """One-sided accuracy constant of the model ``kind``."""
        from .models import ModelKind

        kind = ModelKind.parse(kind)
        if kind is ModelKind.SUBGRADIENT:
            return self.rho
        if kind is ModelKind.PROXIMAL_POINT:
            return 0.0
        return self.prox_linear_tau

    prox_linear_tau = 0.0

    def describe(self) -> dict:
        return {"name": self.name, "n_agents": self.n_agents, "seed": self.seed}


# --------------------------------------------------------------------------
# blind deconvolution


class BlindDeconvolution(Problem):
    """min over (x, y) in S^{n-1} x R^m of E |<a, x><c, y> - b|.

    Samples are fresh Gaussian pairs (a, c) with b = <a, x*><c, y*>.
    Points are flat vectors (x, y) of length n + m.
    """

    name = "blind_deconvolution"
    structure = "bilinear_abs"

    def __init__(self, n=10, m=15, n_agents=20, seed=0, eval_pool=10_000):
        if n < 1 or m < 1:
            raise ParameterError("blind deconvolution needs n, m >= 1")
        self.n, self.m, self.n_agents, self.seed = int(n), int(m), int(n_agents), int(seed)
        self.eval_pool = int(eval_pool)
        gen = rngmod.stream(seed, rngmod.INSTANCE, 0)
        x = gen.standard_normal(self.n)
        self.x_star = x / np.linalg.norm(x)
        self.y_star = gen.standard_normal(self.m)
        self.manifold = geo.Product((geo.Sphere(self.n), geo.Euclidean(self.m)))

    @property
    def truth(self):
        return np.concatenate([self.x_star, self.y_star])

    def split(self, z):
        return z[: self.n], z[self.n :]

    def _draw(self, gen, agent):
        a = gen.standard_normal(self.n)
        c = gen.standard_normal(self.m)
        return a, c, float((a @ self.x_star) * (c @ self.y_star))

    @cached_property
    def pool(self):
        """Frozen evaluation pool: ``eval_pool`` samples per agent, (A, C, b) stacked."""
        As, Cs = [], []
        for i in range(self.n_agents):
            gen = rngmod.stream(self.seed, rngmod.EVAL_POOL, i)
            As.append(gen.standard_normal((self.eval_pool, self.n)))
            Cs.append(gen.standard_normal((self.eval_pool, self.m)))
        A, C = np.vstack(As), np.vstack(Cs)
        return A, C, (A @ self.x_star) * (C @ self.y_star)

    def sample_loss(self, z, payload):
        a, c, b = payload
        x, y = self.split(z)
        return abs((a @ x) * (c @ y) - b)

    def sample_subgradient(self, z, payload):
        # sign(0) = 0 picks the minimal-norm element of d|.| at 0
        a, c, b = payload
        x, y = self.split(z)
        ax, cy = a @ x, c @ y
        s = np.sign(ax * cy - b)
        return np.concatenate([s * cy * a, s * ax * c])

    def full_objective(self, z):
        geo.check_point(self.manifold, z)
        A, C, b = self.pool
        x, y = self.split(z)
        return float(np.mean(np.abs((A @ x) * (C @ y) - b)))

    def local_objective(self, agent, z):
        A, C, b = self.pool
        sl = slice(agent * self.eval_pool, (agent + 1) * self.eval_pool)
        x, y = self.split(z)
        return float(np.mean(np.abs((A[sl] @ x) * (C[sl] @ y) - b[sl])))

    def full_subgradient(self, z):
        return self.value_and_subgradient(z)[1]

    def value_and_subgradient(self, z):
        A, C, b = self.pool
        x, y = self.split(z)
        ax, cy = A @ x, C @ y
        r = ax * cy - b
        s = np.sign(r)
        g = np.concatenate([(s * cy) @ A, (s * ax) @ C]) / b.size
        return float(np.mean(np.abs(r))), g

    def error_metric(self, z):
        x, y = self.split(np.asarray(z, dtype=float))
        return float(
            min(
                np.sqrt(np.sum((s * x - self.x_star) ** 2) + np.sum((s * y - self.y_star) ** 2))
                for s in (1.0, -1.0)
            )
        )

    @cached_property
    def _pool_moments(self):
        A, C, _ = self.pool
        return {
            "abs_a": float(np.mean(np.abs(A))),
            "abs_c": float(np.mean(np.abs(C))),
            "norm_a": float(np.mean(np.linalg.norm(A, axis=1))),
            "norm_c": float(np.mean(np.linalg.norm(C, axis=1))),
            "norm_ac": float(np.mean(np.linalg.norm(A, axis=1) * np.linalg.norm(C, axis=1))),
        }

    @property
    def rho(self):
        """Weak-convexity modulus of the population objective.

        q(z + u) = q(z) + <grad q, u> + <a, u1><c, u2>, and for independent
        isotropic a, c the remainder has E|<a, u1><c, u2>| <= E|a_1| E|c_1| ||u||^2 / 2,
        so rho = E|a_1| E|c_1| (2/pi for Gaussian data), estimated on the pool.
        """
        m = self._pool_moments
        return m["abs_a"] * m["abs_c"]

    @property
    def rho_sample(self):
        """Mean per-sample modulus E ||a|| ||c|| (the curvature of one sampled loss)."""
        return self._pool_moments["norm_ac"]

    @property
    def prox_linear_tau(self):
        # |.| is 1-Lipschitz (l1 = 1) and grad q is ||a|| ||c||-Lipschitz (l2)
        return self.rho_sample

    def lipschitz_bound(self, z=None):
        """Lipschitz bound E||a|| E|c_1| R + E|a_1| E||c|| on {||y|| <= R}.

        R = max(||y||, ||y*||), using independence and isotropy of a and c.
        """
        r = float(np.linalg.norm(self.y_star))
        if z is not None:
            r = max(r, float(np.linalg.norm(self.split(z)[1])))
        m = self._pool_moments
        return m["norm_a"] * m["abs_c"] * r + m["abs_a"] * m["norm_c"]

    def describe(self):
        return {**super().describe(), "n": self.n, "m": self.m, "eval_pool": self.eval_pool}


def gen_blind_deconv(n=10, m=15, N=20, seed=0, eval_pool=10_000):
    return BlindDeconvolution(n, m, N, seed, eval_pool)


# --------------------------------------------------------------------------
# dictionary learning


class DictionaryLearning(Problem):
    """min over X in St(n, n) of (1/m) sum_j ||y_j^T X||_1 with Y = A* S."""

    name = "dictionary_learning"
    structure = "l1_linear"
    rho = 0.0

    def __init__(self, n=10, m=7200, density=0.2, n_agents=20, seed=0):
        if m % n_agents:
            raise ParameterError(f"m={m} columns cannot be split equally over N={n_agents} agents")
        if not 0 < density <= 1:
            raise ParameterError("density must be in (0, 1]")
        self.n, self.m, self.density = int(n), int(m), float(density)
        self.n_agents, self.seed = int(n_agents), int(seed)
        gen = rngmod.stream(seed, rngmod.INSTANCE, 0)
        U, _, Vt = np.linalg.svd(gen.standard_normal((self.n, self.n)))
        self.A_star = U @ Vt
        mask = gen.random((self.n, self.m)) < self.density
        self.S = np.where(mask, gen.standard_normal((self.n, self.m)), 0.0)
        self.Y = self.A_star @ self.S
        self.blocks = np.split(self.Y, self.n_agents, axis=1)
        self.manifold = geo.Stiefel(self.n, self.n)

    def _draw(self, gen, agent):
        block = self.blocks[agent]
        j = int(gen.integers(block.shape[1]))
        return block[:, j].copy()

    def sample_loss(self, X, y):
        return float(np.sum(np.abs(y @ X)))

    def sample_subgradient(self, X, y):
        return np.outer(y, np.sign(y @ X))

    def full_objective(self, X):
        geo.check_point(self.manifold, X)
        return float(np.sum(np.abs(self.Y.T @ X)) / self.m)

    def local_objective(self, agent, X):
        Yi = self.blocks[agent]
        return float(np.sum(np.abs(Yi.T @ X)) / Yi.shape[1])

    def full_subgradient(self, X):
        return self.Y @ np.sign(self.Y.T @ X) / self.m

    def error_metric(self, X, A=None):
        A = self.A_star if A is None else A
        return dict_error(X, A)

    prox_linear_tau = 0.0

    def lipschitz_bound(self, X=None):
        """||Y sign(Y^T X)|| / m <= sigma_max(Y) sqrt(n / m) for every X."""
        return self._sigma_max * float(np.sqrt(self.n / self.m))

    @cached_property
    def _sigma_max(self):
        return float(np.linalg.norm(self.Y, 2))

    def describe(self):
        return {**super().describe(), "n": self.n, "m": self.m, "density": self.density}


def dict_error(X, A):
    """sum_i | max_j |(X[:, i]^T A)_j| - 1 |."""
    G = np.abs(np.asarray(X).T @ np.asarray(A))
    return float(np.sum(np.abs(G.max(axis=1) - 1.0)))


def gen_dict_learn(n=10, m=7200, density=0.2, N=20, seed=0):
    return DictionaryLearning(n, m, density, N, seed)


# --------------------------------------------------------------------------
# generalized eigenvalue problem


def spd_with_condition(n, cond, gen):
    """B = Q diag(lambda) Q^T with lambda log-spaced in [1, cond] and Q Haar-orthogonal."""
    if cond < 1:
        raise ParameterError("condition number must be >= 1")
    Q, R = np.linalg.qr(gen.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    lam = np.logspace(0.0, np.log10(cond), n)
    return (Q * lam) @ Q.T


class Gevp(Problem):
    """min over X^T B X = I_p of -(1/2N) sum_i tr(X^T A_i^T A_i X) / m_i.

    The per-agent Gram matrices are normalized by the row count so that the
    objective and its curvature stay O(1) for any m_i.
    """

    name = "gevp"
    structure = "quadratic"

    def __init__(self, n=10, p=5, m_each=1000, n_agents=10, cond_B=10.0, seed=0, batch=10):
        if not 1 <= p <= n:
            raise ParameterError("need 1 <= p <= n")
        if batch < 1 or batch > m_each:
            raise ParameterError("batch must be in [1, m_each]")
        self.n, self.p, self.m_each = int(n), int(p), int(m_each)
        self.n_agents, self.seed, self.batch = int(n_agents), int(seed), int(batch)
        self.cond_B = float(cond_B)
        gen = rngmod.stream(seed, rngmod.INSTANCE, 0)
        self.B = spd_with_condition(self.n, self.cond_B, gen)
        self.data = [gen.standard_normal((self.m_each, self.n)) for _ in range(self.n_agents)]
        self.C = sum(A.T @ A for A in self.data) / (self.m_each * self.n_agents)
        self.manifold = geo.GeneralizedStiefel(self.n, self.p, self.B)

    def _draw(self, gen, agent):
        rows = gen.choice(self.m_each, size=self.batch, replace=False)
        return self.data[agent][rows]

    def sample_loss(self, X, As):
        return -0.5 * float(np.sum((As @ X) ** 2)) / As.shape[0]

    def sample_subgradient(self, X, As):
        return -(As.T @ (As @ X)) / As.shape[0]

    def full_objective(self, X):
        geo.check_point(self.manifold, X)
        return -0.5 * float(np.trace(X.T @ self.C @ X))

    def local_objective(self, agent, X):
        A = self.data[agent]
        return -0.5 * float(np.sum((A @ X) ** 2)) / self.m_each

    def full_subgradient(self, X):
        return -self.C @ X

    @cached_property
    def generalized_eigs(self):
        w, V = sla.eigh(self.C, self.B)
        return w[::-1], V[:, ::-1]

    @property
    def optimal_value(self):
        return -0.5 * float(np.sum(self.generalized_eigs[0][: self.p]))

    @property
    def optimal_point(self):
        # eigh normalizes B-orthonormally, so the top-p block is feasible
        return self.generalized_eigs[1][:, : self.p].copy()

    def error_metric(self, X):
        return self.full_objective(X) - self.optimal_value

    @cached_property
    def rho(self):
        return float(np.linalg.eigvalsh(self.C)[-1])

    prox_linear_tau = 0.0

    def lipschitz_bound(self, X=None):
        # ||C X|| <= lambda_max(C) ||X|| with ||X||_F <= sqrt(p / lambda_min(B)) on the manifold
        xmax = np.sqrt(self.p / np.linalg.eigvalsh(self.B)[0])
        return self.rho * float(xmax)

    def describe(self):
        return {
            **super().describe(),
            "n": self.n,
            "p": self.p,
            "m_each": self.m_each,
            "cond_B": self.cond_B,
            "batch": self.batch,
        }


def gen_gevp(n=10, p=5, m_each=1000, N=10, cond_B=10.0, seed=0, batch=10):
    return Gevp(n, p, m_each, N, cond_B, seed, batch)


def build_problem(spec: dict) -> Problem:
    """Construct a problem from a config ``problem`` block."""
    spec = dict(spec)
    kind = spec.pop("kind")
    builders = {
        "blind_deconvolution": gen_blind_deconv,
        "dictionary_learning": gen_dict_learn,
        "gevp": gen_gevp,
    }
    if kind not in builders:
        raise ParameterError(f"unknown problem kind {kind!r}")
    return builders[kind](**spec)
