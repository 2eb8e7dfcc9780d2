import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from lookahead_impute.exceptions import ObservabilityError
from lookahead_impute.gaussian import kl_divergence, Gaussian
from lookahead_impute.panel import MCAR, Panel, apply_mask, simulate_factor_panel
from lookahead_impute.posterior import (
    BACKWARD_KL,
    FORWARD_KL,
    GaussianPrior,
    PosteriorSet,
    generate_posteriors,
    make_schedule,
    posterior,
    project_to_basis,
)


def test_schedule_examples():
    assert make_schedule(2, 100, 100).times == (100, 200)
    assert make_schedule(5, 100, 100).times == (100, 125, 150, 175, 200)
    assert make_schedule(101, 100, 100).times == tuple(range(100, 201))
    # 0.5 steps round up: (k-1) * 3 / 2
    assert make_schedule(3, 10, 3).times == (10, 12, 13)
    with pytest.raises(ValueError):
        make_schedule(1, 100, 100)
    with pytest.raises(ValueError):
        make_schedule(102, 100, 100)


def _dense_posterior(values, mask, omega, prior_var, prior_mean=0.0):
    """Condition the joint Gaussian of (theta, observed cells) on the observed cells."""
    T, n = values.shape
    rows = [(t, np.flatnonzero(~mask[t])) for t in range(T)]
    obs_idx = [(t, j) for t, o in rows for j in o]
    N = len(obs_idx)
    H = np.zeros((N, n))
    for r, (t, j) in enumerate(obs_idx):
        H[r, j] = 1.0
    R = np.zeros((N, N))
    for a, (t, i) in enumerate(obs_idx):
        for b, (s, j) in enumerate(obs_idx):
            if t == s:
                R[a, b] = omega[i, j]
    y = np.array([values[t, j] for t, j in obs_idx])
    P0 = prior_var * np.eye(n)
    m0 = np.full(n, prior_mean)
    C = H @ P0 @ H.T + R
    gain = P0 @ H.T @ np.linalg.inv(C)
    return m0 + gain @ (y - H @ m0), P0 - gain @ H @ P0


def test_posterior_matches_dense_conditioning(rng):
    n, T = 3, 12
    omega = random_spd(rng, n)
    values = rng.standard_normal((T, n))
    mask = rng.random((T, n)) < 0.4
    mask[0] = False
    mask[T - 2:] = False
    p = Panel(values, (T - 2, 1, 1), mask=mask)
    prior = GaussianPrior(np.full(n, 0.3), 2.0 * np.eye(n))
    post = posterior(p, omega, T_k=T - 2, prior=prior)
    mu, S = _dense_posterior(values[: T - 2], mask[: T - 2], omega, prior_var=2.0, prior_mean=0.3)
    assert np.allclose(post.mean, mu, rtol=1e-8, atol=1e-10)
    assert np.allclose(post.cov, S, rtol=1e-8, atol=1e-10)


def test_scalar_example():
    p = Panel(np.array([[1.0], [3.0], [0.0], [0.0]]), (2, 1, 1))
    post = posterior(p, np.eye(1))
    assert post.mean[0] == pytest.approx(2.0) and post.cov[0, 0] == pytest.approx(0.5)


def test_fully_observed_flat_prior():
    p = simulate_factor_panel(4, (30, 20, 5), seed=3)
    omega = random_spd(np.random.default_rng(1), 4)
    ps = generate_posteriors(p, omega, make_schedule(4, 30, 20))
    for T_k, g in zip(ps.schedule.times, ps.posteriors):
        assert np.allclose(g.mean, p.values[:T_k].mean(axis=0), rtol=1e-10, atol=1e-12)
        assert np.allclose(g.cov, omega / T_k, rtol=1e-10, atol=1e-14)


def test_diffuse_gaussian_prior_matches_flat(mcar_panel):
    _, masked = mcar_panel
    omega = np.eye(10) + 1.0
    flat = posterior(masked, omega)
    diffuse = posterior(masked, omega, prior=GaussianPrior(np.zeros(10), 1e8 * np.eye(10)))
    assert np.allclose(diffuse.mean, flat.mean, rtol=1e-4, atol=1e-8)
    assert np.allclose(diffuse.cov, flat.cov, rtol=1e-4)


def test_unobserved_asset_under_flat_prior():
    v = np.ones((6, 2))
    mask = np.zeros((6, 2), bool)
    mask[:2, 1] = True
    p = Panel(v, (2, 2, 2), mask=mask)
    with pytest.raises(ObservabilityError, match="asset column 1"):
        posterior(p, np.eye(2))
    # an informative prior makes it fine
    post = posterior(p, np.eye(2), prior=GaussianPrior(np.zeros(2), np.eye(2)))
    assert post.cov[1, 1] == pytest.approx(1.0)


def test_generate_matches_individual_posteriors(mcar_panel):
    _, masked = mcar_panel
    omega = np.eye(10) + 1.0
    sched = make_schedule(5, 100, 100)
    ps = generate_posteriors(masked, omega, sched)
    for T_k, g in zip(sched.times, ps.posteriors):
        single = posterior(masked, omega, T_k=T_k)
        assert np.allclose(g.mean, single.mean, rtol=1e-12, atol=1e-14)
        assert np.allclose(g.cov, single.cov, rtol=1e-12, atol=1e-14)


def test_precision_nesting(mcar_panel):
    _, masked = mcar_panel
    ps = generate_posteriors(masked, np.eye(10) + 1.0, make_schedule(5, 100, 100))
    for a, b in zip(ps.posteriors[:-1], ps.posteriors[1:]):
        diff = np.linalg.inv(b.cov) - np.linalg.inv(a.cov)
        assert np.linalg.eigvalsh(diff).min() > -1e-8


def test_projection_examples():
    from lookahead_impute.posterior import TruncationSchedule
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    ps = PosteriorSet((Gaussian(np.zeros(2), S), Gaussian(np.ones(2), S)), TruncationSchedule((1, 2)))
    fwd = project_to_basis(ps, FORWARD_KL, V=np.eye(2))
    assert np.allclose(fwd.basis.diagonals, 2.0)
    bwd = project_to_basis(ps, BACKWARD_KL, V=np.eye(2))
    assert np.allclose(bwd.basis.diagonals, 1.5)
    assert np.array_equal(fwd.means, ps.means)


def test_projection_keeps_first_posterior_and_traces(mcar_pset):
    p0 = mcar_pset.posteriors[0]
    raw_first = mcar_pset.basis.covariance(0)
    assert np.allclose(raw_first, p0.cov, atol=1e-14)


def test_projection_identity_on_commuting_set(rng):
    from conftest import random_commuting
    from lookahead_impute.posterior import TruncationSchedule
    V, D, covs = random_commuting(rng, 3, 4)
    ps = PosteriorSet(tuple(Gaussian(np.zeros(4), C) for C in covs), TruncationSchedule((1, 2, 3)))
    proj = project_to_basis(ps)
    for a, b in zip(ps.posteriors, proj.posteriors):
        assert np.allclose(a.cov, b.cov, atol=1e-12)


@given(st.integers(0, 10_000))
def test_forward_projection_trace_and_optimality(seed):
    rng = np.random.default_rng(seed)
    from lookahead_impute.posterior import TruncationSchedule
    S0, S1 = random_spd(rng, 2), random_spd(rng, 2)
    ps = PosteriorSet((Gaussian(np.zeros(2), S0), Gaussian(np.zeros(2), S1)), TruncationSchedule((1, 2)))
    proj = project_to_basis(ps, FORWARD_KL)
    assert np.trace(proj.posteriors[1].cov) == pytest.approx(np.trace(S1), rel=1e-10)
    V, d = proj.basis.V, proj.basis.diagonals[1]
    best = kl_divergence(Gaussian(np.zeros(2), S1), proj.posteriors[1])
    for _ in range(1000):
        dd = d * np.exp(rng.normal(0, 0.3, 2))
        trial = Gaussian(np.zeros(2), (V * dd) @ V.T)
        assert kl_divergence(Gaussian(np.zeros(2), S1), trial) >= best - 1e-12


def test_backward_projection_optimality(rng):
    from lookahead_impute.posterior import TruncationSchedule
    S0, S1 = random_spd(rng, 3), random_spd(rng, 3)
    ps = PosteriorSet((Gaussian(np.zeros(3), S0), Gaussian(np.zeros(3), S1)), TruncationSchedule((1, 2)))
    proj = project_to_basis(ps, BACKWARD_KL)
    V, d = proj.basis.V, proj.basis.diagonals[1]
    best = kl_divergence(proj.posteriors[1], Gaussian(np.zeros(3), S1))
    for _ in range(1000):
        dd = d * np.exp(rng.normal(0, 0.3, 3))
        assert kl_divergence(Gaussian(np.zeros(3), (V * dd) @ V.T), Gaussian(np.zeros(3), S1)) >= best - 1e-12


def test_posterior_set_json_roundtrip(mcar_pset):
    back = PosteriorSet.from_dict(json.loads(mcar_pset.to_json()))
    assert np.array_equal(back.means, mcar_pset.means)
    assert np.array_equal(back.covs, mcar_pset.covs)
    assert np.array_equal(back.basis.V, mcar_pset.basis.V)


def test_subset_keeps_basis(mcar_pset):
    sub = mcar_pset.subset([0, 4])
    assert sub.K == 2 and sub.schedule.times == (100, 200)
    assert np.array_equal(sub.basis.diagonals, mcar_pset.basis.diagonals[[0, 4]])
