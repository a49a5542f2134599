"""Soft-filter behavior: downweight arithmetic, stop rules, damage bounds."""

import math

import numpy as np
import pytest

from rcov.corruption import CorruptionSpec, corrupt, sample_gaussian
from rcov.exceptions import SpecError
from rcov.que_filter import (
    FilterConfig,
    default_max_rounds,
    downweight_step,
    filter_coarse,
    filter_fine,
)
from rcov.score_oracle import OracleParams, ScoreReport


def report_from_tau(tau):
    tau = np.asarray(tau, dtype=float)
    return ScoreReport(tau=tau, q=0.0, lam=1.0, nu=1.0, t=0, alpha=0.0)


def fast_oracle():
    return OracleParams(r=32, power_iters=16, power_restarts=2, adaptive_ell=True)


def config(eps, **kw):
    kw.setdefault("oracle", fast_oracle())
    return FilterConfig(epsilon=eps, **kw)


def flat_identity(d):
    return np.eye(d).reshape(-1)


# ---------------------------------------------------------------------------
# downweight_step: pure-rule arithmetic


def test_downweight_two_point_example():
    w = downweight_step(np.array([1.0, 1.0]), report_from_tau([1.0, 3.0]))
    np.testing.assert_allclose(w, [2.0 / 3.0, 0.0])


def test_downweight_single_huge_score():
    w0 = np.array([0.5, 1.0, 1.0, 0.25])
    w = downweight_step(w0, report_from_tau([0.0, 0.0, 1e9, 0.0]))
    assert w[2] == 0.0
    np.testing.assert_allclose(w[[0, 1, 3]], w0[[0, 1, 3]])


def test_downweight_zero_scores_is_noop():
    w0 = np.array([0.3, 0.7])
    assert downweight_step(w0, report_from_tau([0.0, 0.0])) is w0


def test_downweight_uniform_scores_zero_everyone():
    # the raw rule erases the sample on flat scores; the filter loops guard
    # against ever taking this step
    w = downweight_step(np.ones(5), report_from_tau(np.full(5, 2.0)))
    np.testing.assert_array_equal(w, np.zeros(5))


@pytest.mark.parametrize("seed", range(5))
def test_downweight_is_monotone_and_valid(seed):
    rng = np.random.default_rng(seed)
    w0 = rng.uniform(0.0, 1.0, size=40)
    tau = rng.gamma(2.0, 1.0, size=40)
    w = downweight_step(w0, report_from_tau(tau))
    assert (w <= w0 + 1e-15).all()
    assert (w >= 0.0).all() and (w <= 1.0).all()
    # mass removed equals the score-weighted mass, never more than tau_max
    # would charge to the top tail
    assert w.sum() == pytest.approx(w0.sum() - float(w0 @ tau) / tau.max())


# ---------------------------------------------------------------------------
# configuration


def test_config_validation():
    with pytest.raises(SpecError):
        FilterConfig(epsilon=0.5)
    with pytest.raises(SpecError):
        FilterConfig(epsilon=-0.01)
    with pytest.raises(SpecError):
        FilterConfig(epsilon=0.1, mass_floor=0.4)
    with pytest.raises(SpecError):
        FilterConfig(epsilon=0.1, mass_floor=1.2)
    assert FilterConfig(epsilon=0.15).mass_floor == pytest.approx(1.0 - 0.45)
    assert FilterConfig(epsilon=0.0).mass_floor == 1.0
    # the default floor 1 - 3*eps leaves the valid range once eps >= 1/6
    with pytest.raises(SpecError):
        FilterConfig(epsilon=0.2)
    assert FilterConfig(epsilon=0.2, mass_floor=0.6).mass_floor == 0.6


def test_default_max_rounds_grows_with_dimension():
    assert default_max_rounds(4) >= 30
    assert default_max_rounds(4096) > default_max_rounds(16)


# ---------------------------------------------------------------------------
# coarse filter


def test_coarse_clean_data_is_inert():
    d, n = 4, 10000
    Y = sample_gaussian(d, n, np.eye(d), seed=0)
    res = filter_coarse(Y, config(0.05, seed=1), sigma=1.0)
    truth = flat_identity(d)
    empirical = np.tensordot(Y, Y, axes=([1], [1])).reshape(-1) / n
    err_filtered = np.linalg.norm(res.mu_hat - truth)
    err_empirical = np.linalg.norm(empirical - truth)
    assert err_filtered <= 2.0 * err_empirical
    assert res.stop_reason == "spectral_small"
    assert res.rounds_used <= 2


def test_coarse_variance_inflation_recovered():
    d, n, eps = 4, 10000, 0.1
    clean = sample_gaussian(d, n, np.eye(d), seed=2)
    spec = CorruptionSpec(epsilon=eps, strategy="variance_inflate", seed=3)
    data = corrupt(clean, spec, sigma_true=np.eye(d))
    res = filter_coarse(data.samples, config(eps, seed=4), sigma=1.0)

    truth = flat_identity(d)
    assert np.linalg.norm(res.mu_hat - truth) <= 5.0 * math.sqrt(eps)
    Z = data.samples
    unfiltered = np.tensordot(Z, Z, axes=([1], [1])).reshape(-1) / n
    assert np.linalg.norm(unfiltered - truth) >= eps * spec.variance_factor / 2.0


def test_coarse_single_point_no_crash():
    Y = np.array([[1.5], [-0.5]])
    res = filter_coarse(Y, config(0.1, seed=0), sigma=1.0)
    assert res.stop_reason in ("spectral_small", "max_rounds")
    np.testing.assert_allclose(res.mu_hat, np.kron(Y[:, 0], Y[:, 0]))


def test_coarse_mirrored_points_guarded_not_erased():
    # z and -z tensor to the same point: scores are flat, the near-uniform
    # guard must stop the run instead of zeroing all weights
    Y = np.array([[3.0, -3.0], [0.0, 0.0]])
    res = filter_coarse(Y, config(0.1, seed=0), sigma=0.1)
    np.testing.assert_array_equal(res.final_weights, np.ones(2))
    assert res.stop_reason == "max_rounds"
    assert res.rounds_used == 1


# ---------------------------------------------------------------------------
# fine filter


def test_fine_clean_data_error_bound():
    d, n, eps = 4, 40000, 0.05
    Y = sample_gaussian(d, n, np.eye(d), seed=5)
    res = filter_fine(Y, config(eps, seed=6))
    err = np.linalg.norm(res.mu_hat - flat_identity(d))
    assert err <= 4.0 * (d / math.sqrt(n) + eps * math.log(1.0 / eps))


def test_fine_moderate_cluster_error_bound():
    # cluster close enough that its spectral footprint sits under the coarse
    # cutoff (so a coarse pass would be inert) but well above the fine one
    d, n, eps = 4, 10000, 0.05
    clean = sample_gaussian(d, n, np.eye(d), seed=7)
    spec = CorruptionSpec(epsilon=eps, strategy="cluster", seed=8, distance=3.0)
    data = corrupt(clean, spec, sigma_true=np.eye(d))
    res = filter_fine(data.samples, config(eps, seed=9))
    err = np.linalg.norm(res.mu_hat - flat_identity(d))
    assert err <= 8.0 * eps * math.log(1.0 / eps)


def test_fine_no_attributable_mass_stops_immediately():
    # shrunken samples: the weighted second moment sits far below identity,
    # so q <= 0 on the very first report
    rng = np.random.default_rng(10)
    Y = 0.05 * rng.standard_normal((3, 50))
    res = filter_fine(Y, config(0.1, seed=11))
    assert res.stop_reason == "attribution_small"
    assert res.rounds_used == 1
    assert res.qs[0] <= 0.0
    np.testing.assert_array_equal(res.final_weights, np.ones(50))


# ---------------------------------------------------------------------------
# run-level invariants


def labeled_inflation(d, n, eps, seed):
    clean = sample_gaussian(d, n, np.eye(d), seed=seed)
    spec = CorruptionSpec(epsilon=eps, strategy="variance_inflate", seed=seed + 1)
    return corrupt(clean, spec, sigma_true=np.eye(d))


def test_collateral_damage_bounded():
    d, n, eps = 4, 2000, 0.1
    data = labeled_inflation(d, n, eps, seed=12)
    res = filter_coarse(data.samples, config(eps, seed=13), sigma=1.0)
    removed = 1.0 - res.final_weights
    good_removed = float(removed[data.good_mask].sum())
    bad_removed = float(removed[~data.good_mask].sum())
    assert bad_removed > 0.5 * data.n_bad  # the filter actually engaged
    assert good_removed <= bad_removed + 2.0 * eps * n * 0.1


def test_filter_weights_stay_in_unit_interval():
    data = labeled_inflation(4, 1000, 0.1, seed=14)
    res = filter_fine(data.samples, config(0.1, seed=15))
    assert (res.final_weights >= 0.0).all()
    assert (res.final_weights <= 1.0).all()


def test_filter_deterministic():
    data = labeled_inflation(3, 500, 0.1, seed=16)
    a = filter_coarse(data.samples, config(0.1, seed=17), sigma=1.0)
    b = filter_coarse(data.samples, config(0.1, seed=17), sigma=1.0)
    np.testing.assert_array_equal(a.mu_hat, b.mu_hat)
    np.testing.assert_array_equal(a.final_weights, b.final_weights)
    assert a.rounds_used == b.rounds_used
    assert a.stop_reason == b.stop_reason
    assert a.lambdas == b.lambdas and a.qs == b.qs


def test_round_budget_respected():
    data = labeled_inflation(4, 2000, 0.1, seed=18)
    res = filter_coarse(
        data.samples, config(0.1, max_rounds=3, seed=19), sigma=1.0
    )
    assert res.rounds_used <= 3
    assert res.stop_reason in (
        "spectral_small",
        "attribution_small",
        "mass_floor",
        "max_rounds",
    )
    assert len(res.lambdas) == res.rounds_used
    assert len(res.qs) == res.rounds_used


def test_mass_floor_returns_pre_step_weights():
    # epsilon = 0 pins the floor at full mass, so the first real step on
    # noisy scores trips it and the pre-step (uniform) weights come back
    Y = sample_gaussian(3, 300, np.eye(3), seed=20)
    res = filter_fine(Y, config(0.0, seed=21, max_rounds=10))
    if res.stop_reason == "mass_floor":
        np.testing.assert_array_equal(res.final_weights, np.ones(300))
    assert res.final_weights.sum() >= 1.0 * 300 - 1e-9
