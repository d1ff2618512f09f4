from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_ope.agents import AgentConfig, FloorSchedule, collect
from adaptive_ope.diagnostics import (
    FrozenSetup,
    arm_covariance_closed_form,
    brute_force_score_moments,
    coverage_experiment,
    inverse_propensity_dispersion,
    ks_distance,
    monte_carlo_score_moments,
    power_chain_holds,
    power_sums,
    random_frozen_setup,
    random_rational_simplex,
    regression_error_term,
    run_oracle_suite,
    score_variance_closed_form,
    variance_proxy,
)
from adaptive_ope.envs import DiscreteEnv
from adaptive_ope.exceptions import NoAnalyticValueError
from adaptive_ope.harness import ExperimentConfig


def test_exact_model_has_no_regression_term():
    rng = np.random.default_rng(0)
    s = random_frozen_setup(rng, 3, 4)
    s = FrozenSetup(s.context_probs, s.mu, s.e, s.mu.copy())
    pi = rng.dirichlet(np.ones(4), size=3)
    exact = brute_force_score_moments(s, pi)
    assert np.all(regression_error_term(s, pi) == 0.0)
    assert exact.variance == pytest.approx(np.sum(pi * pi / s.e, axis=1), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_score_is_conditionally_unbiased(seed):
    rng = np.random.default_rng(seed)
    s = random_frozen_setup(rng, 4, 3)
    pi = rng.dirichlet(np.ones(3), size=4)
    exact = brute_force_score_moments(s, pi)
    assert np.max(np.abs(exact.mean - np.sum(pi * s.mu, axis=1))) <= 1e-12
    assert exact.marginal_mean == pytest.approx(s.context_probs @ np.sum(pi * s.mu, axis=1),
                                                abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_closed_forms_match_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    s = random_frozen_setup(rng, 3, 4, reward_sd=0.7)
    pi = rng.dirichlet(np.ones(4), size=3)
    exact = brute_force_score_moments(s, pi)
    closed, A = score_variance_closed_form(s, pi)
    assert np.max(np.abs(exact.variance - closed)) <= 1e-12
    assert np.max(np.abs(exact.arm_covariance - arm_covariance_closed_form(s))) <= 1e-12
    assert np.all(A >= -1e-12)


def test_off_diagonal_covariance_hand_value():
    s = FrozenSetup([1.0], [[1.0, 2.0]], [[0.5, 0.5]], [[1.5, 1.0]])
    cov = brute_force_score_moments(s, np.eye(2)[:1]).arm_covariance[0]
    # -(0.5)(-1.0) = 0.5
    assert cov[0, 1] == pytest.approx(0.5, abs=1e-12)


def test_variance_to_proxy_ratio_is_bounded_and_positive():
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(100):
        s = random_frozen_setup(rng, 2, 2, reward_sd=1.0)
        pi = rng.dirichlet(np.ones(2), size=2)
        ratios.append(brute_force_score_moments(s, pi).variance / variance_proxy(s, pi))
    ratios = np.concatenate(ratios)
    assert np.all(ratios > 0) and np.all(np.isfinite(ratios))
    # Var >= Var(Y)/e part, so the ratio is at least reward_sd^2
    assert ratios.min() >= 1.0 - 1e-12 and ratios.max() < 100


def test_enumeration_refuses_huge_support():
    n, K = 1000, 501
    s = FrozenSetup(np.full(n, 1 / n), np.zeros((n, K)), np.full((n, K), 1 / K), np.zeros((n, K)))
    with pytest.raises(ValueError, match="atoms"):
        brute_force_score_moments(s, np.full((n, K), 1 / K))


def test_frozen_setup_validation():
    with pytest.raises(ValueError):
        FrozenSetup([1.0], [[0.0, 1.0]], [[0.0, 1.0]], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        FrozenSetup([1.0], [[np.nan, 1.0]], [[0.5, 0.5]], [[0.0, 0.0]])


@pytest.mark.slow
def test_monte_carlo_agrees_with_enumeration():
    rng = np.random.default_rng(3)
    s = random_frozen_setup(rng, 2, 3)
    pi = rng.dirichlet(np.ones(3), size=2)
    exact = brute_force_score_moments(s, pi)
    mc = monte_carlo_score_moments(s, pi, 10**6, rng)
    assert np.all(np.abs(mc["mean"] - exact.mean) <= 4 * mc["mean_se"])
    assert np.all(np.abs(mc["variance"] - exact.variance) <= 4 * mc["variance_se"])


def test_power_sums_uniform_example():
    half = Fraction(1, 2)
    assert power_sums([half, half], [half, half]) == (1, 1, 1)
    assert power_chain_holds([Fraction(1), Fraction(0)], [half, half])


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_power_chain_property(k, seed):
    rng = np.random.default_rng(seed)
    pi, e = random_rational_simplex(rng, k), random_rational_simplex(rng, k)
    assert sum(pi) == 1 and sum(e) == 1
    assert power_chain_holds(pi, e)


def test_ks_distance():
    assert ks_distance(np.random.default_rng(0).standard_normal(5000)) < 0.03
    assert ks_distance(np.full(100, 5.0)) > 0.99


def test_degenerate_coverage_is_one():
    cfg = ExperimentConfig(env="discrete", probabilities=(1.0,), mean_table=((0.5,),),
                           noise_sd=0.0, T=50, batch_size=10, target="best", replications=5,
                           num_draws=10)
    out = coverage_experiment(cfg)
    for name, res in out.items():
        assert res["coverage"] == 1.0 and res["mean_radius"] == 0.0, name
        assert np.all(res["tstat_samples"] == 0.0)


def test_coverage_experiment_is_deterministic():
    cfg = ExperimentConfig(T=200, batch_size=100, num_draws=200, replications=4,
                           estimators=("DR", "NC-StableVar"), target="arm:0")
    a, b = coverage_experiment(cfg), coverage_experiment(cfg)
    for name in a:
        assert a[name]["coverage"] == b[name]["coverage"]
        assert np.array_equal(a[name]["tstat_samples"], b[name]["tstat_samples"])


def test_coverage_requires_analytic_truth(monkeypatch):
    import adaptive_ope.harness as harness

    target = (harness.PolicyTable.fixed_arm(0, 5, 5), None, None)
    monkeypatch.setattr(harness, "resolve_target", lambda env, name: target)
    cfg = ExperimentConfig(T=100, batch_size=100, num_draws=50, replications=1,
                           estimators=("DR",), target="arm:0")
    with pytest.raises(NoAnalyticValueError):
        coverage_experiment(cfg)


def test_inverse_propensity_dispersion_shape():
    env = DiscreteEnv.example1()
    logs = [collect(env, AgentConfig(num_draws=200), 300, 100, FloorSchedule(0.2, 0.8),
                    np.random.default_rng(s)) for s in range(4)]
    d = inverse_propensity_dispersion(logs)
    assert d.shape == (3,) and d[0] == 0.0 and np.all(d >= 0)
    with pytest.raises(ValueError):
        inverse_propensity_dispersion(logs[:1])


@pytest.mark.slow
def test_oracle_suite_passes():
    report = run_oracle_suite(seed=1, n_setups=20, n_pairs=500, mc_setups=1, mc_draws=10**5)
    assert report["passed"], report
