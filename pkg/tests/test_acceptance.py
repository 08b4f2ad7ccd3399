"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS/FAIL`` line (repeated in the
terminal summary) before asserting. Expensive runs go through the CLI's
``execute`` and are cached per config so that criteria sharing a run do
not repeat it.
"""

import copy
import json
import math
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from drsp import cli
from drsp import geometry as geo
from drsp import metrics
from drsp import models
from drsp import network as net
from drsp import oracle
from drsp import problems as P

pytestmark = pytest.mark.acceptance

RUN_ROOT = None


@pytest.fixture(scope="module", autouse=True)
def run_root(tmp_path_factory):
    global RUN_ROOT
    RUN_ROOT = tmp_path_factory.mktemp("acceptance_runs")
    yield RUN_ROOT
    _execute.cache_clear()


def variant(name, **solver):
    cfg = cli.load_config(name)
    cfg["solver"].update(solver)
    tag = "_".join(f"{k}-{v}" for k, v in sorted(solver.items()))
    cfg["name"] = f"{name}__{tag}" if tag else name
    return cfg


@lru_cache(maxsize=None)
def _execute(cfg_json):
    cfg = json.loads(cfg_json)
    out = RUN_ROOT / f"{cfg['name']}__{len(list(RUN_ROOT.iterdir()))}"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t0 = time.perf_counter()
        traj = cli.execute(cfg, out, plot=False)
        wall = time.perf_counter() - t0
    return traj, (out / "trajectory.csv").read_bytes(), wall


def execute(cfg):
    return _execute(json.dumps(cfg, sort_keys=True))


def stationarity_series(traj):
    return [(r["k"], r["stationarity"]) for r in traj.rows if not math.isnan(r["stationarity"])]


# --------------------------------------------------------------------------
# 1. geometry invariants


def test_criterion_1_geometry_suite(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(0)
    B = P.spd_with_condition(6, 10.0, g)
    manifolds = {
        "sphere": geo.Sphere(5),
        "sphere_r2": geo.Sphere(4, radius=2.0),
        "stiefel": geo.Stiefel(6, 3),
        "gen_stiefel": geo.GeneralizedStiefel(6, 3, B),
        "product": geo.Product((geo.Sphere(10), geo.Euclidean(15))),
    }
    n = 10_000
    feas = proj = 0.0
    for M in manifolds.values():
        for _ in range(n // len(manifolds)):
            X = geo.random_point(M, g)
            eta = geo.random_tangent(M, X, g, norm=float(g.uniform(0, 2)))
            feas = max(feas, geo.feasibility_residual(M, geo.retract(M, X, eta)))
            xi, zeta = g.standard_normal(M.shape), g.standard_normal(M.shape)
            Pxi = geo.tangent_project(M, X, xi)
            proj = max(
                proj,
                float(np.max(np.abs(geo.tangent_project(M, X, Pxi) - Pxi))),
                abs(np.vdot(Pxi, zeta) - np.vdot(xi, geo.tangent_project(M, X, zeta))),
            )
    sff = -math.inf
    for name in ("sphere", "sphere_r2", "stiefel"):
        M = manifolds[name]
        kappa = geo.curvature_bound(M)
        for _ in range(n):
            X = geo.random_point(M, g)
            eta = geo.random_tangent(M, X, g, norm=float(g.uniform(0, 2)))
            sff = max(sff, np.linalg.norm(geo.second_fundamental_form(M, X, eta)) - kappa * np.sum(eta**2))
    normal = max(
        max(r["max_violation_eq13"], r["max_violation_eq14"])
        for r in (
            oracle.probe_normal_inequality(manifolds["sphere"], n, g),
            oracle.probe_normal_inequality(manifolds["stiefel"], n, g),
        )
    )
    wall = time.perf_counter() - t0
    ok = feas <= 1e-8 and proj <= 1e-10 and sff <= 1e-9 and normal <= 1e-9 and wall <= 30
    report(
        1, ok,
        f"feasibility {feas:.1e}, projector {proj:.1e}, sff excess {sff:.1e}, "
        f"normal-vector violation {normal:.1e}, {wall:.1f}s",
    )
    assert ok


# --------------------------------------------------------------------------
# 2. prox oracle equivalence and the backward-step bound


def desk_instances():
    g = np.random.default_rng(1)
    for s in range(25):
        yield P.gen_blind_deconv(n=3, m=2, N=1, seed=s, eval_pool=10), ("ssg", "spp", "spl"), g.uniform(0.5, 8)
    for s in range(25):
        yield P.gen_dict_learn(n=3, m=30, density=0.5, N=1, seed=s), ("ssg", "spp", "spl"), g.uniform(0.5, 8)
    for s in range(20):
        pr = P.gen_gevp(n=3, p=2, m_each=30, N=1, cond_B=4.0, seed=s, batch=5)
        yield pr, ("ssg", "spp"), 4 * pr.rho + g.uniform(1, 10)


def test_criterion_2_prox_oracle(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(2)
    worst, counts, instances = 0.0, {}, 0
    for pr, kinds, beta in desk_instances():
        instances += 1
        assert pr.manifold.dim <= 4
        X = geo.random_point(pr.manifold, g)
        xi = pr.draw_sample(0, int(g.integers(1000)))
        for kind in kinds:
            v = models.prox_step(kind, pr, X, xi, beta).v
            ref = oracle.brute_prox(kind, pr, X, xi, beta, resolution=1e-3)
            worst = max(worst, float(np.linalg.norm(v - ref)))
            counts[kind] = counts.get(kind, 0) + 1
    backward = cli.probe_backward_step(10_000, 0)
    wall = time.perf_counter() - t0
    ok = worst <= 1e-2 and min(counts.values()) >= 50 and backward["passed"] and wall <= 300
    report(
        2, ok,
        f"{instances} instances {counts}, max |v - v_grid| {worst:.2e} (limit 1e-2); "
        f"10^4 prox calls max ||v|| - L/beta {backward['max_violation']:.2e}; {wall:.0f}s",
    )
    assert ok


# --------------------------------------------------------------------------
# 3. consensus rate


def test_criterion_3_consensus_rate(report):
    slopes, contraction = {}, {}
    for model in ("subgradient", "proximal_point", "prox_linear"):
        traj, _, _ = execute(variant("blind_deconv_ring", model=model))
        series = [(b, e) for k, e, b in traj.consensus if k >= 1]
        slopes[model] = metrics.rate_fit(series).slope
        contraction[model] = traj.contraction.to_json()
    ok = all(s <= -1.8 for s in slopes.values())
    info = ", ".join(
        f"{m}: contraction-bound violations {contraction[m]['violations']}/{contraction[m]['checked_rounds']} in-region rounds"
        for m in contraction
    )
    report(
        3, ok,
        "tail slope of log consensus vs log beta_k: "
        + ", ".join(f"{m} {s:.2f}" for m, s in slopes.items())
        + f" (limit -1.8); informational: {info}",
    )
    assert ok


# --------------------------------------------------------------------------
# 4. stationarity trend


STATIONARITY_RUNS = {
    "blind_deconvolution": variant("blind_deconv_ring", stationarity_every=200),
    "dictionary_learning": variant("dict_learn_ring"),
    "gevp": variant("gevp_cond10"),
}


@pytest.mark.parametrize("problem", list(STATIONARITY_RUNS))
def test_criterion_4_stationarity_trend(problem, report):
    cfg = STATIONARITY_RUNS[problem]
    traj, _, wall = execute(cfg)
    series = stationarity_series(traj)
    K = cfg["solver"]["K"]
    first = series[0][1]
    late = min(v for k, v in series if k >= K / 2)
    run_min = metrics.running_min([v for _, v in series])
    tail = [(k, v) for (k, _), v in zip(series, run_min) if k > 0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit_k = metrics.rate_fit(tail)
        fit_sqrt = metrics.rate_fit(tail, x_transform=math.sqrt)
    ratio = late / first
    certs = [r["stationarity_certificate"] for r in traj.rows if not math.isnan(r["stationarity"])]
    # a slope of -0.4 against log k is the stricter reading; against log sqrt(k) it doubles
    ok = ratio <= 0.2 and fit_k.slope <= -0.4 and wall <= 600
    report(
        "4/" + problem, ok,
        f"measure {first:.3g} -> min over k>=K/2 {late:.3g} (ratio {ratio:.3f}, limit 0.2); "
        f"running-min slope vs log k {fit_k.slope:.2f}, vs log sqrt(k) {fit_sqrt.slope:.2f} (limit -0.4); "
        f"max inner certificate {max(certs):.1e}; {wall:.0f}s",
    )
    assert ok


# --------------------------------------------------------------------------
# 5. qualitative figure reproduction


def test_criterion_5a_blind_ordering(report):
    finals, ok = {}, True
    for graph in ("ring", "er", "complete"):
        e = {
            m: execute(variant(f"blind_deconv_{graph}", model=m))[0].final["error_metric"]
            for m in ("prox_linear", "proximal_point", "subgradient")
        }
        finals[graph] = e
        ok &= e["prox_linear"] <= e["proximal_point"] <= e["subgradient"]
    report(
        "5a", ok,
        "final error SPL / SPP / SSG: "
        + "; ".join(
            f"{g} {e['prox_linear']:.2e} / {e['proximal_point']:.2e} / {e['subgradient']:.2e}"
            for g, e in finals.items()
        ),
    )
    assert ok


def test_criterion_5b_dictionary_crossing(report):
    curves = {
        m: execute(variant("dict_learn_ring", model=m, stationarity_every=0))[0]
        for m in ("proximal_point", "prox_linear", "subgradient")
    }
    ssg = curves["subgradient"].column("error_metric")
    ks = curves["subgradient"].column("k")
    ok, parts = True, []
    for m in ("proximal_point", "prox_linear"):
        err = curves[m].column("error_metric")
        below = np.nonzero(err < ssg)[0]
        cross = int(ks[below[0]]) if below.size else None
        ends_lower = err[-1] < ssg[-1]
        ok &= cross is not None and cross <= 200 and ends_lower
        parts.append(f"{m} first below SSG at k={cross}, final {err[-1]:.2e} vs {ssg[-1]:.2e}")
    report("5b", ok, "; ".join(parts) + " (needs crossing by k=200 and a lower final error)")
    assert ok


def test_criterion_5c_gevp_condition(report):
    finals = {}
    for cond in (10, 100):
        traj, _, _ = execute(variant(f"gevp_cond{cond}"))
        finals[cond] = traj.final["stationarity"]["measure"]
    ok = finals[10] <= finals[100]
    report("5c", ok, f"final stationarity cond(B)=10: {finals[10]:.3g}, cond(B)=100: {finals[100]:.3g}")
    assert ok


# --------------------------------------------------------------------------
# 6. network suite


def power_sigma2(W, iters=5000):
    N = W.shape[0]
    D = W - 1.0 / N
    v = np.random.default_rng(0).standard_normal(N)
    for _ in range(iters):
        v = D @ (D @ v)
        v /= np.linalg.norm(v)
    return math.sqrt(np.linalg.norm(D @ (D @ v)))


def test_criterion_6_network_suite(report):
    worst_ds = worst_s2 = 0.0
    t_ok = True
    cases = 0
    for kind in ("ring", "erdos_renyi", "complete"):
        for N in (5, 10, 20, 50):
            for seed in range(3):
                W = net.metropolis_weights(net.build_topology(kind, N, seed=seed, p=0.2))
                net.check_weight_matrix(W, tol=1e-12)
                worst_ds = max(worst_ds, float(np.max(np.abs(W.sum(0) - 1))), float(np.max(np.abs(W - W.T))))
                s2 = net.sigma2(W)
                worst_s2 = max(worst_s2, abs(s2 - power_sigma2(W)))
                t = net.min_consensus_steps(W)
                target = 1 / (5 * math.sqrt(N))
                t_ok &= s2**t <= target and (t == 1 or s2 ** (t - 1) > target)
                cases += 1
    ok = worst_ds <= 1e-12 and worst_s2 <= 1e-8 and t_ok
    report(
        6, ok,
        f"{cases} graphs: doubly-stochastic residual {worst_ds:.1e}, sigma2 vs power iteration "
        f"{worst_s2:.1e}, t condition {'holds' if t_ok else 'violated'}",
    )
    assert ok


# --------------------------------------------------------------------------
# 7. determinism


def test_criterion_7_determinism(report, tmp_path):
    mismatched = []
    for name in cli.bundled_configs():
        cfg = cli.load_config(name)
        _, first, _ = execute(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cli.execute(copy.deepcopy(cfg), tmp_path / name, plot=False)
        if (tmp_path / name / "trajectory.csv").read_bytes() != first:
            mismatched.append(name)
    ok = not mismatched
    report(
        7, ok,
        f"{len(cli.bundled_configs())} bundled configs rerun; "
        + (f"mismatched: {mismatched}" if mismatched else "all CSVs byte-identical"),
    )
    assert ok
