import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drsp import geometry as geo
from drsp import models, oracle
from drsp import problems as P
from drsp.errors import ParameterError
from drsp.models import ModelKind

KINDS = list(ModelKind)


@pytest.fixture(scope="module")
def blind():
    return P.gen_blind_deconv(n=3, m=2, N=2, seed=4, eval_pool=200)


@pytest.fixture(scope="module")
def dictl():
    # St(3, 3) has tangent dimension 3
    return P.gen_dict_learn(n=3, m=60, density=0.5, N=2, seed=4)


@pytest.fixture(scope="module")
def gevp():
    # generalized Stiefel(3, 2) has tangent dimension 3
    return P.gen_gevp(n=3, p=2, m_each=40, N=2, cond_B=4.0, seed=4, batch=5)


def test_parse_aliases():
    assert ModelKind.parse("dr-spl") is ModelKind.PROX_LINEAR
    assert ModelKind.parse("SSG") is ModelKind.SUBGRADIENT
    assert ModelKind.parse("proximal_point") is ModelKind.PROXIMAL_POINT
    with pytest.raises(ParameterError):
        ModelKind.parse("newton")


def test_draw_sample_deterministic(blind):
    a = models.draw_sample(blind, 0, 3)
    b = models.draw_sample(blind, 0, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.payload, b.payload))
    assert (a.agent, a.iteration) == (0, 3)


@pytest.mark.parametrize("kind", KINDS)
def test_models_exact_at_base(kind, blind, dictl, rng):
    for pr in (blind, dictl):
        X = geo.random_point(pr.manifold, rng)
        xi = pr.draw_sample(1, 2)
        assert models.model_value(kind, pr, X, xi, np.zeros(pr.manifold.shape)) == pytest.approx(
            pr.sample_loss(X, xi.payload), abs=1e-14
        )


def test_subgradient_model_affine(blind, rng):
    X = geo.random_point(blind.manifold, rng)
    xi = blind.draw_sample(0, 1)
    v = geo.random_tangent(blind.manifold, X, rng)
    f = lambda u: models.model_value("ssg", blind, X, xi, u)
    assert f(2 * v) - f(0 * v) == pytest.approx(2 * (f(v) - f(0 * v)), abs=1e-12)


def test_prox_linear_zero_at_consistent_sample(blind):
    xi = blind.draw_sample(0, 0)
    assert models.model_value("spl", blind, blind.truth, xi, np.zeros(5)) == 0.0


def test_prox_linear_undefined_for_quadratic(gevp):
    X = gevp.initial_point()
    with pytest.raises(ParameterError):
        models.prox_step("spl", gevp, X, gevp.draw_sample(0, 0), 50.0)


def test_subgradient_prox_zero_sample(blind):
    xi = blind.draw_sample(0, 0)
    res = models.prox_step("ssg", blind, blind.truth, xi, 3.0)
    assert not np.any(res.v)


def test_subgradient_prox_tight_bound(blind, rng):
    X = geo.random_point(blind.manifold, rng)
    xi = blind.draw_sample(0, 9)
    beta = 7.0
    res = models.prox_step("ssg", blind, X, xi, beta)
    L = np.linalg.norm(blind.sample_riemannian_subgradient(X, xi.payload))
    assert res.lipschitz == pytest.approx(L)
    assert np.linalg.norm(res.v) == pytest.approx(L / beta, rel=1e-14)


def test_prox_linear_blind_reference_instance():
    pr = P.gen_blind_deconv(n=4, m=3, N=1, seed=1, eval_pool=10)
    g = np.random.default_rng(0)
    X = geo.random_point(pr.manifold, g)
    xi = pr.draw_sample(0, 0)
    res = models.prox_step("spl", pr, X, xi, 5.0)
    width = np.linalg.norm(pr.sample_riemannian_subgradient(X, xi.payload)) / 5.0
    ref = oracle.brute_prox("spl", pr, X, xi, 5.0, grid_half_width=width)
    assert np.linalg.norm(res.v - ref) <= 2e-3


def _desk_cases(pr, kinds, rng, count, beta_lo, beta_hi):
    for j in range(count):
        X = geo.random_point(pr.manifold, rng)
        yield kinds[j % len(kinds)], X, pr.draw_sample(j % pr.n_agents, j), float(rng.uniform(beta_lo, beta_hi))


@pytest.mark.parametrize("name,kinds,betas", [
    ("blind", ["ssg", "spp", "spl"], (1.0, 6.0)),
    ("dictl", ["ssg", "spp", "spl"], (1.0, 6.0)),
    ("gevp", ["ssg", "spp"], (12.0, 20.0)),
])
def test_prox_matches_brute_force(name, kinds, betas, request, rng):
    pr = request.getfixturevalue(name)
    for kind, X, xi, beta in _desk_cases(pr, kinds, rng, 6, *betas):
        res = models.prox_step(kind, pr, X, xi, beta)
        ref = oracle.brute_prox(kind, pr, X, xi, beta)
        assert np.linalg.norm(res.v - ref) <= 1e-2, (kind, beta)
        assert geo.is_tangent(pr.manifold, X, res.v)


def test_point_and_linear_coincide_for_dictionary(dictl, rng):
    # the inner map y^T X is linear, so both models give the same subproblem
    pr = dictl
    X = geo.random_point(pr.manifold, rng)
    xi = pr.draw_sample(0, 3)
    a = models.prox_step("spp", pr, X, xi, 2.0).v
    b = models.prox_step("spl", pr, X, xi, 2.0).v
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_backward_step_and_certificate(kind, blind, dictl, rng):
    for pr in (blind, dictl):
        for X, xi, beta in (
            (geo.random_point(pr.manifold, rng), pr.draw_sample(0, j), float(rng.uniform(0.5, 20)))
            for j in range(40)
        ):
            res = models.prox_step(kind, pr, X, xi, beta)
            assert np.linalg.norm(res.v) <= res.lipschitz / beta + 1e-8
            assert res.certificate <= 100 * models.PROX_TOL * max(1.0, beta)


def test_quadratic_prox_requires_beta_above_curvature(gevp):
    X = gevp.initial_point()
    xi = gevp.draw_sample(0, 0)
    H = xi.payload.T @ xi.payload / xi.payload.shape[0]
    with pytest.raises(ParameterError):
        models.prox_step("spp", gevp, X, xi, 0.5 * float(np.linalg.eigvalsh(H)[-1]) + 1e-9)


def test_nonpositive_beta_rejected(blind):
    with pytest.raises(ParameterError):
        models.prox_step("ssg", blind, blind.truth, blind.draw_sample(0, 0), 0.0)


@pytest.mark.parametrize("kind", ["spp", "spl"])
def test_prox_objective_not_above_zero_step(kind, blind, rng):
    X = geo.random_point(blind.manifold, rng)
    xi = blind.draw_sample(0, 0)
    res = models.prox_step(kind, blind, X, xi, 3.0)
    assert res.objective_value <= models.model_value(kind, blind, X, xi, 0 * X) + 1e-12
    recomputed = models.model_value(kind, blind, X, xi, res.v) + 1.5 * np.sum(res.v**2)
    assert res.objective_value == pytest.approx(recomputed, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(KINDS), st.floats(0.0, 1.0))
def test_model_convexity_midpoint(seed, kind, lam):
    g = np.random.default_rng(seed)
    pr = P.gen_blind_deconv(n=3, m=2, N=1, seed=seed % 7, eval_pool=10)
    X = geo.random_point(pr.manifold, g)
    xi = pr.draw_sample(0, seed % 11)
    v1, v2 = (geo.random_tangent(pr.manifold, X, g, norm=g.uniform(0, 2)) for _ in range(2))
    # the sampled proximal-point model is weakly convex with modulus ||a|| ||c||
    a, c, _ = xi.payload
    rho = float(np.linalg.norm(a) * np.linalg.norm(c)) if kind is ModelKind.PROXIMAL_POINT else 0.0
    F = lambda v: models.model_value(kind, pr, X, xi, v) + 0.5 * rho * np.sum(v**2)
    mid = F(lam * v1 + (1 - lam) * v2)
    assert mid <= lam * F(v1) + (1 - lam) * F(v2) + 1e-9


def test_one_sided_proximal_point_tau_zero(blind):
    rep = models.verify_one_sided("spp", blind, 400, 0.0, np.random.default_rng(0), pairs=3)
    assert rep["passed"]
    for row in rep["pairs"]:
        assert abs(row["lhs"]) <= row["rhs"] + 1e-12 or row["lhs"] <= 0


def test_one_sided_subgradient_same_point(blind):
    rep = models.verify_one_sided("ssg", blind, 50, blind.rho, np.random.default_rng(1), pairs=2, radius=0.0)
    # with Y = X the left side is sampling noise around zero
    for row in rep["pairs"]:
        assert abs(row["lhs"]) <= row["rhs"]


def test_one_sided_prox_linear_blind():
    pr = P.gen_blind_deconv(n=10, m=15, N=1, seed=0, eval_pool=10_000)
    rep = models.verify_one_sided("spl", pr, 10_000, pr.tau("spl"), np.random.default_rng(2), pairs=2)
    assert rep["passed"]
