import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oodil.envs import BanditEnv, DrivingEnv, PointMassEnv
from oodil.numcore import grad_check
from oodil.rl import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Batch,
    Learner,
    Policy,
    RlHyper,
    collect_batch,
    evaluate,
    gae_advantages,
    policy_update,
    surrogate_loss,
    train_rl,
)


def hand_batch(rewards, done_last=True, d=1):
    """A single-environment batch holding one episode with the given rewards."""
    T = len(rewards)
    r = np.asarray(rewards, float).reshape(T, 1)
    done = np.zeros((T, 1), bool)
    done[-1] = done_last
    end = done.copy()
    end[-1] = True
    s = np.arange(T, dtype=float).reshape(T, 1, 1).repeat(d, axis=2)
    z = np.zeros((T, 1))
    return Batch(s, z, z, z, r, r, s + 1, done, end)


def test_hyper_validation():
    with pytest.raises(ValueError):
        RlHyper(gamma=0.0)
    with pytest.raises(ValueError):
        RlHyper(clip_ratio=0.0)


def test_zero_reward_fn_and_exact_count():
    env = DrivingEnv()
    pol = Policy.init(2, np.random.default_rng(0))
    b = collect_batch(env, pol, lambda s, s2: np.zeros(len(s)), 1000, np.random.default_rng(1))
    assert b.n_steps == 1000
    assert np.all(b.r == 0.0)
    assert np.any(b.env_r != 0.0)
    assert np.all(np.abs(b.a) <= 1.0)


def test_batch_deterministic():
    env = DrivingEnv()
    pol = Policy.init(2, np.random.default_rng(0))
    a = collect_batch(env, pol, None, 512, np.random.default_rng(5))
    b = collect_batch(env, pol, None, 512, np.random.default_rng(5))
    for name in ("s", "u", "r", "s_next", "done"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_batch_resets_from_given_starts():
    env = DrivingEnv()
    pol = Policy.init(2, np.random.default_rng(0))
    starts = np.array([[0.2, 0.0], [0.8, 0.0]])
    b = collect_batch(env, pol, None, 640, np.random.default_rng(2), starts=starts)
    first = b.s[0]
    assert set(map(tuple, first)) <= set(map(tuple, starts))
    # every state following an episode end is one of the starts
    after = b.s[1:][b.end[:-1]]
    assert len(after) and set(map(tuple, after)) <= set(map(tuple, starts))


def test_gae_hand_computation():
    b = hand_batch([1.0, 2.0, 3.0])
    zero = lambda s: np.zeros(len(s))
    adv, ret = gae_advantages(b, zero, 1.0, 1.0, normalize=False)
    np.testing.assert_allclose(adv[:, 0], [6.0, 5.0, 3.0])
    np.testing.assert_allclose(ret[:, 0], [6.0, 5.0, 3.0])
    adv, _ = gae_advantages(b, zero, 1.0, 1.0)
    raw = np.array([6.0, 5.0, 3.0])
    np.testing.assert_allclose(adv[:, 0], (raw - raw.mean()) / raw.std())


def test_single_step_advantage_is_reward_minus_value():
    b = hand_batch([2.5])
    adv, _ = gae_advantages(b, lambda s: np.full(len(s), 0.75), 0.99, 0.95, normalize=False)
    assert adv[0, 0] == pytest.approx(2.5 - 0.75)


def test_perfect_value_gives_zero_advantage():
    # constant reward 1, gamma 0.5, episode truncated (not done) with V = 2 everywhere
    b = hand_batch([1.0] * 5, done_last=False)
    adv, _ = gae_advantages(b, lambda s: np.full(len(s), 2.0), 0.5, 0.9, normalize=False)
    np.testing.assert_allclose(adv, 0.0, atol=1e-12)


def test_zero_advantage_leaves_policy_unchanged():
    env = DrivingEnv()
    hyper = RlHyper(entropy_coef=0.0, steps_per_batch=256, minibatch=64)
    learner = Learner.init(2, hyper, np.random.default_rng(0))
    b = collect_batch(env, learner.policy, None, 256, np.random.default_rng(1))
    zeros = np.zeros_like(b.r)
    new, diag = policy_update(learner, b, hyper, np.random.default_rng(2), zeros, zeros)
    assert not diag["aborted"]
    for k, v in learner.policy.params().items():
        np.testing.assert_array_equal(new.policy.params()[k], v)


def test_entropy_bonus_alone_raises_log_std():
    env = DrivingEnv()
    hyper = RlHyper(entropy_coef=0.1, steps_per_batch=256, minibatch=64, epochs=1)
    learner = Learner.init(2, hyper, np.random.default_rng(0))
    b = collect_batch(env, learner.policy, None, 256, np.random.default_rng(1))
    zeros = np.zeros_like(b.r)
    new, _ = policy_update(learner, b, hyper, np.random.default_rng(2), zeros, zeros)
    assert new.policy.log_std[0] > learner.policy.log_std[0]


def test_non_finite_loss_aborts():
    env = DrivingEnv()
    hyper = RlHyper(steps_per_batch=128, minibatch=64)
    learner = Learner.init(2, hyper, np.random.default_rng(0))
    b = collect_batch(env, learner.policy, None, 128, np.random.default_rng(1))
    adv = np.full_like(b.r, np.nan)
    new, diag = policy_update(learner, b, hyper, np.random.default_rng(2), adv, adv)
    assert diag["aborted"] and new is learner


def test_surrogate_gradient_finite_differences():
    rng = np.random.default_rng(3)
    pol = Policy.init(2, rng, hidden=(8, 8), init_log_std=-0.3)
    s = rng.uniform(size=(40, 2))
    u = rng.normal(size=40)
    # old log-probs near the current ones so both clipped and unclipped terms occur
    lp_old = pol.log_prob(s, u) + rng.normal(scale=0.3, size=40)
    adv = rng.normal(size=40)

    def fn(p):
        loss, g, _ = surrogate_loss(pol.with_params(p), s, u, lp_old, adv, 0.2, 0.01)
        return loss, g

    assert grad_check(fn, pol.params(), tolerance=1e-4) < 1e-4


def test_log_std_clamped():
    pol = Policy.init(1, np.random.default_rng(0))
    p = pol.params()
    p["log_std"] = np.array([9.0])
    assert pol.with_params(p).log_std[0] == LOG_STD_MAX
    p["log_std"] = np.array([-9.0])
    assert pol.with_params(p).log_std[0] == LOG_STD_MIN


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), log_std=st.floats(-4, 1))
def test_sampled_actions_in_range(seed, log_std):
    rng = np.random.default_rng(seed)
    pol = Policy.init(2, rng, init_log_std=log_std)
    a, u, lp = pol.sample(rng.uniform(size=(50, 2)), rng)
    assert np.all(np.abs(a) <= 1.0)
    assert np.all(np.isfinite(lp))


def test_sample_log_prob_consistent():
    rng = np.random.default_rng(4)
    pol = Policy.init(2, rng)
    s = rng.uniform(size=(30, 2))
    _, u, lp = pol.sample(s, rng)
    np.testing.assert_allclose(lp, pol.log_prob(s, u), atol=1e-12)


def test_bandit_converges_to_optimum():
    hyper = RlHyper(steps_per_batch=64, minibatch=64, epochs=4, hidden=(16,), entropy_coef=0.0,
                    policy_lr=3e-3, init_log_std=-0.5)
    learner = train_rl(BanditEnv(), hyper, 200, np.random.default_rng(0))
    mean_action = float(learner.policy.act_deterministic(np.zeros((1, 1)))[0])
    assert abs(mean_action - 0.5) < 0.1


def test_training_is_deterministic():
    hyper = RlHyper(steps_per_batch=64, minibatch=32, epochs=2, hidden=(8,))
    a = train_rl(BanditEnv(), hyper, 3, np.random.default_rng(1))
    b = train_rl(BanditEnv(), hyper, 3, np.random.default_rng(1))
    for k, v in a.policy.params().items():
        np.testing.assert_array_equal(b.policy.params()[k], v)


def test_pointmass_beats_random_policy():
    env = PointMassEnv()
    hyper = RlHyper(steps_per_batch=1024, minibatch=256, policy_lr=3e-3)
    learner = train_rl(env, hyper, 25, np.random.default_rng(0))
    trained = evaluate(learner.policy, env, 20, np.random.default_rng(10))
    rng = np.random.default_rng(11)
    rand = evaluate(lambda s: rng.uniform(-1, 1, size=len(s)), env, 20, np.random.default_rng(10))
    se = np.sqrt(np.var(trained["returns"]) / 20 + np.var(rand["returns"]) / 20)
    assert trained["mean_return"] - rand["mean_return"] > 3 * se


def test_evaluate_statistics():
    env = DrivingEnv()
    res = evaluate(lambda s: np.zeros(len(s)), env, 50, np.random.default_rng(0))
    assert res["goal_rate"] + res["collision_rate"] + res["timeout_rate"] == pytest.approx(1.0)
    assert len(res["returns"]) == len(res["lengths"]) == 50
    again = evaluate(lambda s: np.zeros(len(s)), env, 50, np.random.default_rng(0))
    assert again["returns"] == res["returns"]
    with pytest.raises(ValueError):
        evaluate(lambda s: np.zeros(len(s)), env, 0, np.random.default_rng(0))
