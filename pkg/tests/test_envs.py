import numpy as np
import pytest
from scipy.stats import norm

from adaptive_ope.envs import (
    ClassificationEnv,
    DiscreteEnv,
    RegionEnv,
    best_contextual_policy,
    best_fixed_arm_policy,
    load_classification_csv,
    make_env,
    realize_reward,
    sample_context,
)
from adaptive_ope.exceptions import DatasetError


class FixedQuantileRng:
    def __init__(self, q):
        self.q = q

    def random(self, n=None):
        return self.q if n is None else np.full(n, self.q)


def test_example1_structure():
    env = DiscreteEnv.example1()
    assert env.cell_probabilities.tolist() == [0.6, 0.1, 0.1, 0.1, 0.1]
    assert np.array_equal(env.mean_table, np.eye(5))
    assert env.n_arms == 5


def test_example1_quantile_03_is_context0():
    assert sample_context(DiscreteEnv.example1(), FixedQuantileRng(0.3)) == 0


def test_region_context_is_finite_3_vector():
    x = sample_context(RegionEnv(), np.random.default_rng(0))
    assert x.shape == (3,) and np.all(np.isfinite(x))


def test_classification_context_support():
    env = ClassificationEnv(np.arange(10.0).reshape(5, 2), [0, 1, 0, 1, 1])
    rng = np.random.default_rng(0)
    _, rows = env.sample_contexts(rng, 1000)
    assert set(rows.tolist()) <= set(range(5))


def test_example1_context_frequencies():
    _, cells = DiscreteEnv.example1().sample_contexts(np.random.default_rng(1), 10**5)
    freq = np.bincount(cells, minlength=5) / 10**5
    assert np.all(np.abs(freq - [0.6, 0.1, 0.1, 0.1, 0.1]) <= 0.01)


def test_reward_variance_matches_noise():
    env = DiscreteEnv.example1()
    y = env.realize_rewards(np.random.default_rng(2), np.full(10**5, 3), np.full(10**5, 1))
    assert 0.9 <= y.var() <= 1.1


def test_noise_free_rewards():
    assert realize_reward(DiscreteEnv.example1(noise_sd=0), 2, 2, None) == 1.0
    env = RegionEnv(signal=False, noise_sd=0)
    assert realize_reward(env, np.array([2.0, 2.0, 0.0]), 3, None) == 0.0
    cls = ClassificationEnv(np.eye(3), [0, 1, 2], noise_sd=0)
    assert realize_reward(cls, 1, 0, None) == 0.0
    assert realize_reward(cls, 1, 1, None) == 1.0


def test_region_probabilities_sum_to_one_exactly():
    env = RegionEnv()
    probs = env.region_probabilities()
    assert probs.sum() == 1.0
    assert norm.cdf(0.5) == pytest.approx(0.6915, abs=1e-4)
    assert probs[0] == pytest.approx(norm.cdf(0.5) ** 2, abs=1e-15)


def test_region_signal_contrast_value():
    env = RegionEnv(signal=True)
    p1, p2 = env.contrast_policies()
    delta = env.policy_value(p1) - env.policy_value(p2)
    assert delta == pytest.approx(0.7 * (1 - norm.cdf(0.5) ** 2), abs=1e-12)
    assert delta == pytest.approx(0.3653, abs=1e-4)


def test_example1_best_policies():
    env = DiscreteEnv.example1()
    assert np.array_equal(best_contextual_policy(env).table, np.eye(5))
    assert np.all(best_fixed_arm_policy(env).table[:, 0] == 1.0)


def test_nosignal_best_policies_tie_to_arm0():
    env = RegionEnv(signal=False)
    assert np.all(best_contextual_policy(env).table[:, 0] == 1.0)
    assert np.all(best_fixed_arm_policy(env).table[:, 0] == 1.0)


def test_classification_best_policies():
    env = ClassificationEnv(np.eye(4), [1, 0, 1, 1])
    assert np.argmax(env.best_contextual_policy().table, axis=1).tolist() == [1, 0, 1, 1]
    assert np.all(env.best_fixed_arm_policy().table[:, 1] == 1.0)
    assert env.policy_value(env.best_fixed_arm_policy()) == pytest.approx(0.75)
    assert env.policy_value(env.best_contextual_policy()) == 1.0


def test_load_csv_factorizes_in_order(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("f,label\n1.0,a\n2.0,b\n")
    env = load_classification_csv(str(path), "label")
    assert env.n_arms == 2 and env.labels.tolist() == [0, 1]


def test_load_csv_constant_column_becomes_zero(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("f,g,label\n1.0,5,a\n2.0,5,b\n3.0,5,a\n")
    env = load_classification_csv(str(path), "label", standardize=True)
    assert np.all(env.features[:, 1] == 0.0)
    assert env.features[:, 0].mean() == pytest.approx(0.0, abs=1e-15)
    assert env.features[:, 0].std() == pytest.approx(1.0)


def test_load_csv_errors(tmp_path):
    path = tmp_path / "three.csv"
    path.write_text("f,label\n1,a\n2,b\n3,a\n")
    with pytest.raises(DatasetError, match="label column not found"):
        load_classification_csv(str(path), "class")
    with pytest.raises(DatasetError):
        load_classification_csv(str(tmp_path / "missing.csv"), "label")
    bad = tmp_path / "bad.csv"
    bad.write_text("f,label\n1,a\nx,b\n")
    with pytest.raises(DatasetError):
        load_classification_csv(str(bad), "label")
    single = tmp_path / "single.csv"
    single.write_text("f,label\n1,a\n2,a\n")
    with pytest.raises(DatasetError):
        load_classification_csv(str(single), "label")


def test_separable_and_majority_truths(tmp_path):
    path = tmp_path / "sep.csv"
    rows = ["x,label"] + [f"{-1 - i},neg" for i in range(7)] + [f"{1 + i},pos" for i in range(3)]
    path.write_text("\n".join(rows) + "\n")
    env = make_env("classification", dataset=str(path))
    assert env.policy_value(env.best_contextual_policy()) == 1.0
    assert env.policy_value(env.best_fixed_arm_policy()) == pytest.approx(0.7, abs=1e-15)


def test_make_env_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_env("nope")
