"""Synchronous rounds of the distributed Riemannian stochastic proximal method.

Each round every agent i draws a sample, solves the tangent prox subproblem
for a direction v_i and moves to

    X_i <- R_{X_i}(-alpha grad h_{i,t}(X) + v_i),
    grad h_{i,t}(X) = P_{T_{X_i}}(X_i - sum_j [W^t]_ij X_j),

with every agent reading the same round-k snapshot.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from . import metrics
from . import network as net
from . import rng as rngmod
from .errors import AgentStepError, DrspError, GeometryError, ParameterError
from .models import ModelKind, prox_step

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "k",
    "consensus_error",
    "objective_at_iam",
    "error_metric",
    "max_v_norm",
    "beta_k",
    "in_S1",
    "in_S2",
    "in_S3",
    "stationarity",
    "stationarity_certificate",
)


# --------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class BetaSchedule:
    """beta_k = sqrt(k + 1) / c (diminishing) or beta_bar sqrt(K + 1) (fixed horizon)."""

    kind: str
    c: float = 1.0
    beta_bar: float = 1.0
    horizon: int = 0

    def __post_init__(self):
        if self.kind == "diminishing":
            if not self.c > 0:
                raise ParameterError("diminishing schedule needs c > 0")
        elif self.kind == "fixed_horizon":
            if not self.beta_bar > 0 or self.horizon < 0:
                raise ParameterError("fixed-horizon schedule needs beta_bar > 0 and K >= 0")
        else:
            raise ParameterError(f"unknown beta schedule {self.kind!r}")

    def __call__(self, k):
        return beta_value(self, k)

    def to_json(self):
        if self.kind == "diminishing":
            return {"kind": "diminishing", "c": self.c}
        return {"kind": "fixed_horizon", "beta_bar": self.beta_bar, "K": self.horizon}


def diminishing(c):
    return BetaSchedule("diminishing", c=float(c))


def fixed_horizon(beta_bar, K):
    return BetaSchedule("fixed_horizon", beta_bar=float(beta_bar), horizon=int(K))


def beta_value(schedule, k):
    if k < 0:
        raise ValueError("k must be >= 0")
    if schedule.kind == "diminishing":
        return math.sqrt(k + 1) / schedule.c
    return schedule.beta_bar * math.sqrt(schedule.horizon + 1)


# --------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class SolverConfig:
    model: ModelKind
    beta: BetaSchedule
    K: int
    alpha: float = 1.0
    t: int = 1
    seed: int = 0
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    log_every: int = 10
    check_every: int = 50
    stationarity_every: int = 0
    stationarity_iters: int = 2000
    init: str = "shared"
    scatter_radius: float = 0.0
    agent_order: Optional[Sequence[int]] = None

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        if not self.alpha >= 0:
            raise ParameterError("alpha must be nonnegative")
        if self.t < 1:
            raise ParameterError("consensus steps t must be >= 1")
        if self.K < 0:
            raise ParameterError("K must be >= 0")
        if self.log_every < 1 or self.check_every < 1:
            raise ParameterError("log_every and check_every must be >= 1")
        if self.init not in ("shared", "scatter"):
            raise ParameterError(f"unknown init mode {self.init!r}")

    def region_radii(self, kappa):
        """(delta1, delta2), defaulting to 1/(20 kappa_g) and delta1/5."""
        d1 = self.delta1 if self.delta1 is not None else (1.0 / (20.0 * kappa) if kappa > 0 else math.inf)
        d2 = self.delta2 if self.delta2 is not None else d1 / 5.0
        return d1, d2


@dataclass(frozen=True)
class SwarmState:
    k: int
    points: np.ndarray

    @property
    def n_agents(self):
        return self.points.shape[0]


# --------------------------------------------------------------------------
# one round


def consensus_gradient(M, i, points, Wt):
    """grad h_{i,t} = P_T(X_i - sum_j Wt_ij X_j)."""
    P = np.asarray(points, dtype=float)
    Xi = P[i]
    mix = np.tensordot(Wt[i], P, axes=1)
    return geo.tangent_project(M, Xi, Xi - mix)


def consensus_gradient_mixed_form(M, i, points, Wt):
    """Alternative form -P_T(sum_j Wt_ij X_j); equal to the above when P_T(X_i) = 0."""
    P = np.asarray(points, dtype=float)
    return -geo.tangent_project(M, P[i], np.tensordot(Wt[i], P, axes=1))


@dataclass(frozen=True)
class StepInfo:
    max_v_norm: float
    max_certificate: float
    max_lipschitz: float


def step(state, config, problem, Wt, beta=None, order=None):
    """Advance every agent by one synchronous round; returns (state, StepInfo)."""
    M = problem.manifold
    k = state.k
    beta = beta_value(config.beta, k) if beta is None else beta
    snapshot = state.points
    snapshot.setflags(write=False)
    N = snapshot.shape[0]
    order = range(N) if order is None else order
    new = np.empty_like(snapshot)
    done = np.zeros(N, dtype=bool)
    vmax = cmax = lmax = 0.0
    for i in order:
        try:
            xi = problem.draw_sample(i, k, seed=config.seed)
            res = prox_step(config.model, problem, snapshot[i], xi, beta)
            d = -config.alpha * consensus_gradient(M, i, snapshot, Wt) + res.v
            new[i] = geo.retract(M, snapshot[i], d)
        except DrspError as exc:
            raise AgentStepError(i, k, exc) from exc
        done[i] = True
        vmax = max(vmax, float(np.linalg.norm(res.v)))
        cmax = max(cmax, res.certificate)
        lmax = max(lmax, res.lipschitz)
    if not done.all():
        raise ParameterError("agent order must cover every agent")
    return SwarmState(k + 1, new), StepInfo(vmax, cmax, lmax)


# --------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class RegionFlags:
    in_S1: bool
    in_S2: bool
    in_S3: bool
    left_region: bool = False
    max_deviation: float = math.nan
    distance_surrogate: bool = False

    @property
    def in_S(self):
        return self.in_S1 and self.in_S2 and self.in_S3


def region_diagnostics(M, points, delta1, delta2, kappa_g):
    """Membership of the three local-region conditions around the IAM."""
    P = np.asarray(points, dtype=float)
    try:
        X_hat = geo.induced_arithmetic_mean(M, P)
    except GeometryError:
        return RegionFlags(False, False, False, left_region=True)
    dev = np.sqrt(np.sum((P - X_hat).reshape(P.shape[0], -1) ** 2, axis=1))
    s1 = bool(dev.max() <= delta1)
    s2 = bool(np.sum(dev**2) <= P.shape[0] * delta2**2)
    D = (2.0 - math.sqrt(2.0)) / kappa_g if kappa_g > 0 else math.inf
    dists = [geo.riemannian_distance(M, X, X_hat) for X in P]
    s3 = bool(max(d.value for d in dists) <= D)
    return RegionFlags(s1, s2, s3, False, float(dev.max()), any(d.surrogate for d in dists))


@dataclass
class ContractionCheck:
    """Empirical one-step consensus contraction over rounds spent inside the region."""

    M1: float
    M2: float
    L_t: float
    alpha: float
    kappa: float
    delta1: float
    slack: float = 0.05
    checked: int = 0
    violations: int = 0

    def rho_t_sq(self, max_dev):
        phi = 2.0 - 4.0 * self.kappa * max_dev
        a, L = self.alpha, self.L_t
        return 1.0 - (a * phi * L - 4.0 * a * a * L * L * (self.M1 + self.M2 * self.delta1))

    def C1_sq(self):
        a, L = self.alpha, self.L_t
        if a == 0 or self.M1 == 0:
            return math.inf
        return 2.0 * (self.M1 + 2.0 * self.M2 * self.delta1) + 1.0 / (2.0 * a * a * L * L * self.M1)

    def update(self, before, after, N, L, beta, max_dev):
        """``before``/``after`` are total squared consensus errors ||X - X_hat||^2."""
        bound = self.rho_t_sq(max_dev) * before + self.C1_sq() * N * L * L / beta**2
        self.checked += 1
        if after > (1.0 + self.slack) * bound:
            self.violations += 1

    @property
    def violation_rate(self):
        return self.violations / self.checked if self.checked else 0.0

    def to_json(self):
        return {
            "checked_rounds": self.checked,
            "violations": self.violations,
            "violation_rate": self.violation_rate,
            "rho_t_sq_at_delta1": self.rho_t_sq(self.delta1),
            "C1_sq": self.C1_sq(),
        }


# --------------------------------------------------------------------------
# full run


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    consensus: list = field(default_factory=list)
    final_state: Optional[SwarmState] = None
    contraction: Optional[ContractionCheck] = None
    constants: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    aborted: Optional[str] = None

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return repr(float(x))


class RunAborted(DrspError):
    """A run stopped early; ``trajectory`` holds everything logged so far."""

    def __init__(self, cause, trajectory):
        super().__init__(f"run aborted: {cause}")
        self.cause = cause
        self.trajectory = trajectory


def initial_points(problem, config):
    M = problem.manifold
    X0 = problem.initial_point(config.seed)
    N = problem.n_agents
    if config.init == "shared" or config.scatter_radius == 0.0:
        return np.stack([X0] * N)
    pts = []
    for i in range(N):
        gen = rngmod.stream(config.seed, rngmod.INIT, i + 1)
        r = config.scatter_radius * float(gen.uniform())
        pts.append(geo.retract(M, X0, geo.random_tangent(M, X0, gen, norm=r)))
    return np.stack(pts)


def mixing_matrix(graph, t):
    W = net.metropolis_weights(graph) if isinstance(graph, net.Topology) else np.asarray(graph, float)
    net.check_weight_matrix(W)
    return W, net.mixing_power(W, t)


def run_constants(problem, config, W):
    """Spectral and geometric constants recorded in the manifest."""
    M = problem.manifold
    kappa = problem.kappa
    gen = rngmod.stream(config.seed, rngmod.DIAGNOSTICS, 1)
    M1, M2 = geo.fit_retraction_constants(M, 2000, gen)
    N = W.shape[0]
    s2 = net.sigma2(W)
    d1, d2 = config.region_radii(kappa)
    L_t = net.lt_constant(W, config.t) if N > 1 else 1.0
    out = {
        "sigma2": s2,
        "L_t": L_t,
        "t": config.t,
        "t_min": net.consensus_steps_for(s2, N) if s2 < 1 else None,
        "kappa_g": kappa,
        "M1": M1,
        "M2": M2,
        "delta1": d1,
        "delta2": d2,
        "rho": problem.rho,
        "L": problem.lipschitz_bound(),
        "beta0": beta_value(config.beta, 0),
        "beta0_exceeds_rho": beta_value(config.beta, 0) > problem.rho,
    }
    # theory-side step sizes, exposed but never enforced
    chk = ContractionCheck(M1, M2, L_t, config.alpha, kappa, d1)
    rts = chk.rho_t_sq(d1)
    L = out["L"]
    phi = 2.0 - 4.0 * kappa * d1
    cands = [1.0, phi / (4.0 * L_t * (M1 + M2 * d1))]
    if M2 > 0:
        cands.append(kappa / M2)
    out["alpha_bar"] = min(cands)
    if config.alpha > 0 and 0 <= rts < 1 and math.isfinite(d2):
        out["beta_bar_theory"] = max(
            5 * L / (config.alpha * d2), math.sqrt(chk.C1_sq()) * L / (d2 * math.sqrt(1 - rts))
        )
    else:
        out["beta_bar_theory"] = None
    return out


def run(config, problem, graph, progress=None):
    """Execute K rounds and return the logged :class:`Trajectory`."""
    M = problem.manifold
    W, Wt = mixing_matrix(graph, config.t)
    N = W.shape[0]
    if N != problem.n_agents:
        raise ParameterError(f"graph has {N} nodes but the problem has {problem.n_agents} agents")
    consts = run_constants(problem, config, W)
    if not consts["beta0_exceeds_rho"]:
        warnings.warn(
            f"beta_0={consts['beta0']:.4g} does not exceed the weak-convexity estimate "
            f"rho={problem.rho:.4g}; the prox subproblems may be nonconvex",
            stacklevel=2,
        )
    kappa = consts["kappa_g"]
    d1, d2 = consts["delta1"], consts["delta2"]
    traj = Trajectory(constants=consts)
    traj.contraction = ContractionCheck(consts["M1"], consts["M2"], consts["L_t"], config.alpha, kappa, d1)

    state = SwarmState(0, initial_points(problem, config))
    lam = metrics.default_lambda(problem, geo.induced_arithmetic_mean(M, state.points))
    traj.constants["lambda"] = lam
    info = None
    prev_err = None
    prev_flags = None
    try:
        while True:
            k = state.k
            X_hat = geo.induced_arithmetic_mean(M, state.points)
            err_tot = float(np.sum((state.points - X_hat) ** 2))
            traj.consensus.append((k, err_tot / N, beta_value(config.beta, k)))
            if prev_err is not None and prev_flags is not None and prev_flags.in_S:
                traj.contraction.update(
                    prev_err, err_tot, N, info.max_lipschitz, beta_value(config.beta, k - 1),
                    prev_flags.max_deviation,
                )
            flags = region_diagnostics(M, state.points, d1, d2, kappa)
            if k % config.log_every == 0 or k == config.K:
                traj.rows.append(_log_row(problem, config, state, X_hat, err_tot / N, flags, info, lam))
                if progress:
                    progress(traj.rows[-1])
            if k % config.check_every == 0:
                for X in state.points:
                    geo.check_point(M, X)
            if k >= config.K:
                break
            prev_err, prev_flags = err_tot, flags
            state, info = step(state, config, problem, Wt, order=config.agent_order)
    except DrspError as exc:
        traj.final_state = state
        traj.aborted = str(exc)
        raise RunAborted(exc, traj) from exc

    traj.final_state = state
    X_hat = geo.induced_arithmetic_mean(M, state.points)
    rep = metrics.stationarity_measure(problem, state.points, lam, max_iter=config.stationarity_iters)
    traj.final = {
        "k": state.k,
        "error_metric": problem.error_metric(X_hat),
        "objective_at_iam": problem.full_objective(X_hat),
        "consensus_error": rep.consensus_term,
        "stationarity": rep.to_json(),
        "contraction": traj.contraction.to_json(),
    }
    return traj


def _log_row(problem, config, state, X_hat, cons, flags, info, lam):
    k = state.k
    row = {
        "k": k,
        "consensus_error": cons,
        "objective_at_iam": problem.full_objective(X_hat),
        "error_metric": problem.error_metric(X_hat),
        "max_v_norm": math.nan if info is None else info.max_v_norm,
        "beta_k": beta_value(config.beta, k),
        "in_S1": flags.in_S1,
        "in_S2": flags.in_S2,
        "in_S3": flags.in_S3,
        "stationarity": math.nan,
        "stationarity_certificate": math.nan,
    }
    se = config.stationarity_every
    if se and (k % se == 0 or k == config.K):
        rep = metrics.stationarity_measure(problem, state.points, lam, max_iter=config.stationarity_iters)
        row["stationarity"] = rep.measure
        row["stationarity_certificate"] = rep.inner_certificate
    return row


def with_overrides(config, **kw):
    return replace(config, **kw)
