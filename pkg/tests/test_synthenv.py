"""Environment tests: analytic oracles, density cross-checks, sampling CIs."""

import math

import numpy as np
import pytest
from scipy import stats

from offbandit.core import (
    ActionSpace,
    Continuous,
    Discrete,
    rng_from,
    save_dataset,
)
from offbandit.synthenv import (
    ContinuousLogging,
    DiscreteLogging,
    LoggingPolicySpec,
    SyntheticEnvSpec,
    brute_force_optimum,
    build_env,
    default_benchmark_env,
    default_benchmark_space,
    generate_dataset,
    logging_propensity,
    logging_propensity_batch,
    oracle_mean,
    reward_bound,
    sample_contexts,
    sample_interaction,
    sample_logging_actions,
    true_reward,
    true_reward_batch,
    true_reward_grad,
    true_value,
)


def tiny_env(noise_std=0.0, eps=0.2, linear=(0.3, 0.1), center=(0.5, 0.5), weight=2.0,
             length_scale=0.7):
    space = ActionSpace((Continuous(0.0, 1.0),))
    logging = LoggingPolicySpec(
        (ContinuousLogging(0.5, np.zeros(1), 0.3),), eps
    )
    return SyntheticEnvSpec(
        context_dim=1,
        space=space,
        length_scale=length_scale,
        bump_weights=np.array([weight]),
        bump_centers=np.array([center], dtype=float),
        linear_term=np.array(linear, dtype=float),
        noise_std=noise_std,
        logging=logging,
        seed=0,
    )


# -- reward surface ---------------------------------------------------------


def test_value_at_bump_center_is_weight_plus_linear():
    # exponent exactly zero at the center, so the bump contributes exactly w
    env = tiny_env(linear=(0.0, 0.0))
    assert true_reward(env, np.array([0.5]), np.array([0.5])) == 2.0
    env = tiny_env()
    value = true_reward(env, np.array([0.5]), np.array([0.5]))
    assert value == pytest.approx(2.0 + 0.3 * 0.5 + 0.1 * 0.5, abs=1e-15)


def test_far_query_decays_to_zero():
    env = tiny_env(linear=(0.0, 0.0), center=(0.0, 0.0), length_scale=0.05)
    assert abs(true_reward(env, np.array([1.0]), np.array([1.0]))) < 1e-100


def test_reward_rejects_invalid_action():
    env = tiny_env()
    with pytest.raises(ValueError, match="dim 0"):
        true_reward(env, np.array([0.5]), np.array([1.5]))


def test_gradient_matches_central_differences():
    env = default_benchmark_env(seed=3)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(20):
        s = rng.uniform(size=env.context_dim)
        a = env.space.lows + rng.uniform(size=env.space.n_dims) * env.space.ranges
        grad = true_reward_grad(env, s, a)
        fd = np.empty_like(grad)
        for j in range(a.size):
            e = np.zeros_like(a)
            e[j] = h
            fd[j] = (
                true_reward_batch(env, s, a + e)[0]
                - true_reward_batch(env, s, a - e)[0]
            ) / (2 * h)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-6


def test_reward_bound_holds_on_samples():
    env = default_benchmark_env(seed=1)
    bound = reward_bound(env)
    rng = np.random.default_rng(2)
    s = rng.uniform(size=(500, env.context_dim))
    a = env.space.lows + rng.uniform(size=(500, env.space.n_dims)) * env.space.ranges
    assert np.abs(true_reward_batch(env, s, a)).max() <= bound


# -- logging policy ---------------------------------------------------------


def test_noiseless_reward_equals_true_reward():
    env = tiny_env(noise_std=0.0)
    rec = sample_interaction(env, np.array([0.3]), seed=5)
    assert rec.reward == true_reward(env, rec.context, rec.action)


def test_propensity_at_least_eps_times_uniform():
    env = default_benchmark_env(seed=4)
    uniform_density = 1.0
    for d in env.space.dims:
        uniform_density /= (d.hi - d.lo) if isinstance(d, Continuous) else len(d.levels)
    data = generate_dataset(env, 300, seed=9)
    assert (data.propensities >= env.logging_mix * uniform_density - 1e-15).all()


def test_uniform_policy_ratio_bounded_by_inverse_eps():
    env = default_benchmark_env(seed=4)
    uniform_density = 1.0
    for d in env.space.dims:
        uniform_density /= (d.hi - d.lo) if isinstance(d, Continuous) else len(d.levels)
    data = generate_dataset(env, 300, seed=10)
    ratios = uniform_density / data.propensities
    assert ratios.max() <= 1.0 / env.logging_mix + 1e-12


def test_propensity_matches_independent_truncnorm_density():
    env = default_benchmark_env(seed=6)
    data = generate_dataset(env, 200, seed=11)
    eps = env.logging_mix
    uniform_density = 1.0
    for d in env.space.dims:
        uniform_density /= (d.hi - d.lo) if isinstance(d, Continuous) else len(d.levels)
    for i in range(len(data)):
        s, a = data.contexts[i], data.actions[i]
        informative = 1.0
        for j, (dim, ldim) in enumerate(zip(env.space.dims, env.logging.dims)):
            if isinstance(dim, Continuous):
                m = ldim.intercept + float(ldim.coef @ s)
                alpha = (dim.lo - m) / ldim.width
                beta = (dim.hi - m) / ldim.width
                informative *= stats.truncnorm.pdf(a[j], alpha, beta, loc=m, scale=ldim.width)
            else:
                level = list(dim.levels).index(a[j])
                informative *= ldim.prefs[level]
        expected = (1 - eps) * informative + eps * uniform_density
        assert data.propensities[i] == pytest.approx(expected, rel=1e-12)


def test_recorded_propensity_equals_closed_form_call():
    env = default_benchmark_env(seed=7)
    rec = sample_interaction(env, np.full(env.context_dim, 0.4), seed=13)
    assert rec.propensity == logging_propensity(env, rec.context, rec.action)


def test_discrete_marginal_frequencies_within_ci():
    env = default_benchmark_env(seed=8)
    n = 100_000
    contexts = sample_contexts(env, n, seed=14)
    actions = sample_logging_actions(env, contexts, rng_from(15))
    j = 10  # first discrete dim, 5 levels
    dim = env.space.dims[j]
    prefs = env.logging.dims[j].prefs
    eps = env.logging_mix
    expected = (1 - eps) * prefs + eps / len(dim.levels)
    for k, level in enumerate(dim.levels):
        freq = float((actions[:, j] == level).mean())
        se = math.sqrt(expected[k] * (1 - expected[k]) / n)
        assert abs(freq - expected[k]) <= 3 * se, f"level {level}: {freq} vs {expected[k]}"


def test_continuous_samples_inside_boxes():
    env = default_benchmark_env(seed=9)
    contexts = sample_contexts(env, 2000, seed=16)
    actions = sample_logging_actions(env, contexts, rng_from(17))
    assert (actions >= env.space.lows).all() and (actions <= env.space.highs).all()


# -- dataset generation -----------------------------------------------------


def test_generate_dataset_basics():
    env = default_benchmark_env(seed=2)
    data = generate_dataset(env, 5, seed=21)
    assert len(data) == 5
    assert (data.propensities > 0).all()
    assert data.contexts.shape == (5, 20) and data.actions.shape == (5, 14)


def test_generate_same_seed_identical_csv(tmp_path):
    env = default_benchmark_env(seed=2)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(generate_dataset(env, 40, seed=22), p1)
    save_dataset(generate_dataset(env, 40, seed=22), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_prefix_property():
    # records come from per-index sub-streams, so a shorter run is a prefix
    env = default_benchmark_env(seed=2)
    big = generate_dataset(env, 10, seed=23)
    small = generate_dataset(env, 3, seed=23)
    np.testing.assert_array_equal(big.contexts[:3], small.contexts)
    np.testing.assert_array_equal(big.actions[:3], small.actions)
    np.testing.assert_array_equal(big.rewards[:3], small.rewards)
    np.testing.assert_array_equal(big.propensities[:3], small.propensities)


def test_mean_logged_reward_matches_mc_oracle():
    env = default_benchmark_env(seed=0)
    data = generate_dataset(env, 100_000, seed=24)
    logged_mean = float(data.rewards.mean())
    # independent oracle: 10^6 fresh draws of E[R*(s, a)] under the same
    # logging policy (noise is zero-mean, so it is excluded)
    rng = np.random.default_rng(987654321)
    total, count = 0.0, 0
    for _ in range(20):
        contexts = rng.uniform(size=(50_000, env.context_dim))
        actions = sample_logging_actions(env, contexts, rng)
        total += float(true_reward_batch(env, contexts, actions).sum())
        count += 50_000
    oracle = total / count
    assert logged_mean == pytest.approx(oracle, rel=0.01)


# -- oracle evaluation ------------------------------------------------------


def test_true_value_constant_chooser_single_context():
    env = tiny_env()
    contexts = sample_contexts(env, 1, seed=31)
    value, se = true_value(env, lambda s: np.array([0.7]), 1, seed=31)
    assert value == true_reward(env, contexts[0], np.array([0.7]))
    assert se == 0.0


def test_true_value_deterministic():
    env = default_benchmark_env(seed=5)
    const = env.space.lows.copy()
    chooser = lambda s: const  # noqa: E731
    v1 = true_value(env, chooser, 50, seed=32)
    v2 = true_value(env, chooser, 50, seed=32)
    assert v1 == v2


def test_true_value_invalid_action_names_context():
    env = tiny_env()
    with pytest.raises(ValueError, match="context 0"):
        true_value(env, lambda s: np.array([2.0]), 3, seed=33)


def test_oracle_mean_matches_manual():
    env = tiny_env()
    contexts = np.array([[0.1], [0.9]])
    actions = np.array([[0.2], [0.8]])
    vals = true_reward_batch(env, contexts, actions)
    mean, se = oracle_mean(env, contexts, actions)
    assert mean == pytest.approx(float(vals.mean()))
    assert se == pytest.approx(float(vals.std(ddof=1) / math.sqrt(2)))


# -- brute-force optimum ----------------------------------------------------


def test_brute_force_finds_1d_bump():
    env = tiny_env(linear=(0.0, 0.0), center=(0.3, 0.6), weight=1.5)
    action, value = brute_force_optimum(env, np.array([0.3]), grid_resolution=801)
    step = 1.0 / 800
    assert abs(action[0] - 0.6) <= step
    assert value == pytest.approx(1.5, rel=1e-4)


def test_brute_force_pure_discrete_enumeration():
    space = ActionSpace((Discrete((0.0, 0.5, 1.0)), Discrete((0.0, 0.5, 1.0))))
    logging = LoggingPolicySpec(
        (DiscreteLogging(np.ones(3) / 3), DiscreteLogging(np.ones(3) / 3)), 0.3
    )
    env = SyntheticEnvSpec(
        context_dim=1,
        space=space,
        length_scale=0.5,
        bump_weights=np.array([1.0, 0.7]),
        bump_centers=np.array([[0.2, 0.5, 1.0], [0.8, 0.0, 0.5]]),
        linear_term=np.array([0.0, 0.1, -0.2]),
        noise_std=0.0,
        logging=logging,
        seed=0,
    )
    s = np.array([0.4])
    best_action, best_value = brute_force_optimum(env, s, grid_resolution=2)
    values = {}
    for x in (0.0, 0.5, 1.0):
        for y in (0.0, 0.5, 1.0):
            values[(x, y)] = true_reward(env, s, np.array([x, y]))
    assert best_value == max(values.values())
    assert values[tuple(best_action)] == best_value


def test_brute_force_resolution_monotone():
    env = tiny_env()
    s = np.array([0.25])
    # linspace(0,1,5) is a subset of linspace(0,1,9), so the value cannot drop
    _, v5 = brute_force_optimum(env, s, grid_resolution=5)
    _, v9 = brute_force_optimum(env, s, grid_resolution=9)
    assert v9 >= v5


def test_brute_force_grid_cap():
    env = default_benchmark_env(seed=0)
    with pytest.raises(ValueError, match="cap"):
        brute_force_optimum(env, np.full(20, 0.5), grid_resolution=10)


# -- spec validation and builder --------------------------------------------


def test_center_outside_box_rejected():
    with pytest.raises(ValueError, match="context box"):
        tiny_env(center=(1.5, 0.5))
    with pytest.raises(ValueError, match="action box"):
        tiny_env(center=(0.5, 1.5))


def test_eps_zero_rejected():
    with pytest.raises(ValueError, match="eps"):
        LoggingPolicySpec((ContinuousLogging(0.5, np.zeros(1), 0.3),), 0.0)


def test_logging_kind_mismatch_rejected():
    space = ActionSpace((Discrete((0.0, 1.0)),))
    logging = LoggingPolicySpec((ContinuousLogging(0.5, np.zeros(1), 0.3),), 0.1)
    with pytest.raises(ValueError, match="dim 0"):
        SyntheticEnvSpec(
            context_dim=1,
            space=space,
            length_scale=0.5,
            bump_weights=np.array([1.0]),
            bump_centers=np.array([[0.5, 0.5]]),
            linear_term=np.zeros(2),
            noise_std=0.0,
            logging=logging,
            seed=0,
        )


def test_build_env_deterministic():
    a = default_benchmark_env(seed=12)
    b = default_benchmark_env(seed=12)
    np.testing.assert_array_equal(a.bump_centers, b.bump_centers)
    np.testing.assert_array_equal(a.bump_weights, b.bump_weights)
    np.testing.assert_array_equal(a.linear_term, b.linear_term)
    c = default_benchmark_env(seed=13)
    assert (a.bump_centers != c.bump_centers).any()


def test_default_benchmark_shape():
    env = default_benchmark_env()
    assert env.space.n_dims == 14
    assert env.context_dim == 20 and env.joint_dim == 34
    assert env.bumps == 8
    assert sum(env.space.discrete_mask) == 4
    assert env.noise_std == 0.1 and env.logging_mix == 0.1


def test_propensity_batch_matches_scalar():
    env = default_benchmark_env(seed=1)
    data = generate_dataset(env, 20, seed=41)
    batch = logging_propensity_batch(env, data.contexts, data.actions)
    np.testing.assert_allclose(batch, data.propensities, rtol=1e-13)
