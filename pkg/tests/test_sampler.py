import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from lookahead_impute.consensus import backward_kl_barycenter
from lookahead_impute.exceptions import DimensionError, NotPDError
from lookahead_impute.gaussian import Gaussian
from lookahead_impute.panel import MCAR, Panel, apply_mask, simulate_factor_panel
from lookahead_impute.sampler import (
    COND_EXPECT,
    FULL_BAYES,
    ImputationPlan,
    conditional_map,
    draw_theta,
    impute,
    imputation_rng,
)


def test_diagonal_omega_has_no_cross_terms():
    omega = np.diag([1.0, 2.0, 3.0])
    cm = conditional_map([True, False, True], [5.0], omega)
    assert np.array_equal(cm.A, [[1, 0, 0], [0, 0, 1]])
    assert np.array_equal(cm.b, [0.0, 0.0])
    assert np.array_equal(cm.S, np.diag([1.0, 3.0]))


def test_bivariate_conditioning():
    rho, x = 0.6, 1.3
    omega = np.array([[1.0, rho], [rho, 1.0]])
    cm = conditional_map([True, False], [x], omega)
    theta = np.array([0.2, -0.5])
    assert cm.mean(theta)[0] == pytest.approx(theta[0] + rho * (x - theta[1]))
    assert cm.S[0, 0] == pytest.approx(1 - rho**2)
    # the full-row form ignores the missing entry
    full = conditional_map([True, False], [np.nan, x], omega)
    assert np.allclose(full.b, cm.b)


def test_fully_missing_and_fully_observed_rows():
    omega = random_spd(np.random.default_rng(0), 3)
    cm = conditional_map([True] * 3, [], omega)
    assert np.array_equal(cm.A, np.eye(3)) and np.array_equal(cm.b, np.zeros(3))
    assert np.allclose(cm.S, omega)
    assert conditional_map([False] * 3, [1.0, 2.0, 3.0], omega).empty


def test_conditional_map_errors():
    with pytest.raises(DimensionError):
        conditional_map([True, False, False], [1.0], np.eye(3))
    with pytest.raises(NotPDError):
        conditional_map([True, False], [1.0], np.array([[1.0, 1.0], [1.0, 1.0]]))


@given(st.integers(0, 10_000))
def test_conditional_map_matches_precision_form(seed):
    # Y | X from the joint precision: mean theta_Y - P_YY^-1 P_YX (x - theta_X), cov P_YY^-1
    rng = np.random.default_rng(seed)
    n = 4
    omega = random_spd(rng, n)
    mask = rng.random(n) < 0.5
    if mask.all() or not mask.any():
        mask[0], mask[1] = True, False
    x = rng.standard_normal(n)
    theta = rng.standard_normal(n)
    P = np.linalg.inv(omega)
    Y, X = np.flatnonzero(mask), np.flatnonzero(~mask)
    PYY = P[np.ix_(Y, Y)]
    mean = theta[Y] - np.linalg.solve(PYY, P[np.ix_(Y, X)] @ (x[X] - theta[X]))
    cm = conditional_map(mask, x, omega)
    assert np.allclose(cm.mean(theta), mean, atol=1e-10)
    assert np.allclose(cm.S, np.linalg.inv(PYY), atol=1e-10)
    assert np.linalg.eigvalsh(cm.S).min() > -1e-12


@pytest.fixture(scope="module")
def small():
    truth = simulate_factor_panel(4, (40, 10, 5), seed=11)
    masked = apply_mask(truth, MCAR(0.4), seed=12)
    omega = random_spd(np.random.default_rng(3), 4)
    return truth, masked, omega


def test_plan_matches_per_row_maps(small):
    _, masked, omega = small
    theta = np.array([0.1, -0.2, 0.3, 0.0])
    out = ImputationPlan(masked, omega).fill(theta)
    for t in np.flatnonzero(masked.mask.any(axis=1)):
        cm = conditional_map(masked.mask[t], masked.values[t], omega)
        assert np.allclose(out.values[t, cm.missing], cm.mean(theta), atol=1e-12)


def test_no_missing_cells_is_identity(small):
    truth, _, omega = small
    for mode in (COND_EXPECT, FULL_BAYES):
        out = impute(truth, Gaussian(np.zeros(4), np.eye(4)), omega, mode, m=2, seed=1)
        for p in out:
            assert np.array_equal(p.values, truth.values)


def test_point_mass_with_diagonal_omega(small):
    _, masked, _ = small
    theta = np.array([1.0, 2.0, 3.0, 4.0])
    out = impute(masked, Gaussian(theta, 1e-24 * np.eye(4)), np.diag([1.0, 2.0, 0.5, 1.0]), COND_EXPECT, 1)[0]
    r, c = np.nonzero(masked.mask)
    assert np.allclose(out.values[r, c], theta[c], rtol=0, atol=1e-10)


def test_observed_cells_preserved_and_other_rows_untouched(small):
    _, masked, omega = small
    post = Gaussian(np.zeros(4), 0.1 * np.eye(4))
    for p in impute(masked, post, omega, FULL_BAYES, m=5, seed=4):
        obs = ~masked.mask
        assert np.array_equal(p.values[obs], masked.values[obs])
        assert np.array_equal(p.values[masked.n_train:], masked.values[masked.n_train:])
        assert not np.isnan(p.values).any() and not p.mask.any()


def test_cond_expect_is_deterministic_given_theta(small):
    _, masked, omega = small
    plan = ImputationPlan(masked, omega)
    theta = draw_theta(Gaussian(np.zeros(4), np.eye(4)), np.random.default_rng(0))
    assert np.array_equal(plan.fill(theta).values, plan.fill(theta).values)
    with pytest.raises(ValueError):
        plan.fill(theta, FULL_BAYES)
    with pytest.raises(DimensionError):
        plan.fill(theta[:3])


def test_full_bayes_variance():
    # one missing cell, bivariate Omega: Var = Var(A theta) + 1 - rho^2
    rho = 0.6
    omega = np.array([[1.0, rho], [rho, 1.0]])
    v = np.zeros((4, 2))
    mask = np.zeros((4, 2), bool)
    mask[0, 0] = True
    panel = Panel(v, (2, 1, 1), mask=mask)
    post = Gaussian([0.0, 0.0], [[0.5, 0.1], [0.1, 0.3]])
    A = np.array([1.0, -rho])
    expected = A @ post.cov @ A + 1 - rho**2
    draws = np.array([p.values[0, 0] for p in impute(panel, post, omega, FULL_BAYES, m=10_000, seed=9)])
    assert draws.var(ddof=1) == pytest.approx(expected, rel=0.05)


def test_longitudinal_independence():
    omega = np.array([[1.0, 0.5], [0.5, 1.0]])
    v = np.zeros((4, 2))
    mask = np.zeros((4, 2), bool)
    mask[0, 0] = mask[1, 0] = True
    panel = Panel(v, (2, 1, 1), mask=mask)
    plan = ImputationPlan(panel, omega)
    theta = np.zeros(2)
    rng = np.random.default_rng(2)
    draws = np.array([plan.fill(theta, FULL_BAYES, rng).values[:2, 0] for _ in range(20_000)])
    r = np.corrcoef(draws.T)[0, 1]
    assert abs(r) < 4 / np.sqrt(draws.shape[0])


def test_streams_independent_of_order(small):
    _, masked, omega = small
    post = Gaussian(np.zeros(4), 0.2 * np.eye(4))
    all_ = impute(masked, post, omega, FULL_BAYES, m=4, seed=123)
    some = impute(masked, post, omega, FULL_BAYES, seed=123, indices=[3, 1])
    assert np.array_equal(some[0].values, all_[3].values)
    assert np.array_equal(some[1].values, all_[1].values)
    a = imputation_rng(5, 0).standard_normal(3)
    b = imputation_rng(np.random.SeedSequence(5, spawn_key=(3,)), 0).standard_normal(3)
    assert np.array_equal(a, b)


def test_mixture_draws():
    comps = (Gaussian([-3.0], [[0.01]]), Gaussian([3.0], [[0.01]]))
    h = backward_kl_barycenter(comps, [0.3, 0.7])
    rng = np.random.default_rng(0)
    x = np.array([draw_theta(h, rng)[0] for _ in range(5000)])
    assert (x > 0).mean() == pytest.approx(0.7, abs=0.03)
