import numpy as np
import pytest

from oodil.cluster import ClusterHyper
from oodil.demos import Corpus, transitions
from oodil.envs import DrivingConfig, DrivingEnv, gap_controller, scripted_driving_demo
from oodil.imitate import (
    PipelineHyper,
    VARIANTS,
    evaluate,
    run_variant,
    stage_seeds,
    train_weighted_gail,
)
from oodil.rl import RlHyper
from oodil.transfer import GailHyper, sampling_distribution

TINY = PipelineHyper(
    cluster=ClusterHyper(K=2, sub_len=5, hidden=8, batch_trajectories=4, pretrain_iters=2,
                         joint_iters=2),
    rl=RlHyper(steps_per_batch=64, minibatch=32, epochs=1, hidden=(8,)),
    transfer=GailHyper(iterations=2, disc_hidden=(8,), disc_minibatch=32),
    imitation=GailHyper(iterations=3, disc_hidden=(8,), disc_minibatch=32, eval_every=1,
                        eval_episodes=3),
)


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(0)
    trajs = []
    for name, cfg in (("s0", DrivingConfig((0.1, 0.5), 1.0)), ("s2", DrivingConfig((0.25, 0.25), 5.0))):
        for i in range(4):
            trajs.append(scripted_driving_demo(cfg, "middle", rng, f"{name}-{i}", f"{name}/middle"))
    return Corpus(trajs)


def _same_params(a, b):
    pa, pb = a.params(), b.params()
    return pa.keys() == pb.keys() and all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_uniform_weights_reproduce_naive_run(corpus):
    n = len(transitions(corpus))
    runs = [train_weighted_gail(DrivingConfig(), corpus, p, TINY.rl, TINY.imitation,
                                np.random.default_rng(3))
            for p in (None, np.full(n, 1.0 / n), sampling_distribution(np.ones(n)))]
    for other in runs[1:]:
        assert _same_params(runs[0].policy, other.policy)
        assert runs[0].trace == other.trace


def test_point_mass_weights_change_the_run(corpus):
    n = len(transitions(corpus))
    a = train_weighted_gail(DrivingConfig(), corpus, None, TINY.rl, TINY.imitation,
                            np.random.default_rng(3))
    b = train_weighted_gail(DrivingConfig(), corpus, np.eye(n)[0], TINY.rl, TINY.imitation,
                            np.random.default_rng(3))
    assert a.trace["disc_loss"] != b.trace["disc_loss"]


def test_invalid_weights_rejected(corpus):
    n = len(transitions(corpus))
    with pytest.raises(ValueError):
        train_weighted_gail(DrivingConfig(), corpus, np.full(n - 1, 1.0 / (n - 1)), TINY.rl,
                            TINY.imitation, np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_weighted_gail(DrivingConfig(), corpus, np.full(n, 1.0), TINY.rl, TINY.imitation,
                            np.random.default_rng(0))


def test_learning_curve_is_ordered(corpus):
    res = train_weighted_gail(DrivingConfig(), corpus, None, TINY.rl, TINY.imitation,
                              np.random.default_rng(0))
    steps = [row["env_steps"] for row in res.trace["curve"]]
    assert steps == sorted(steps) and len(steps) == 3


def test_stage_seeds_are_reproducible_and_distinct():
    a, b = stage_seeds(7), stage_seeds(7)
    assert a["transfer"] == b["transfer"]
    assert a["cluster"].random() == b["cluster"].random()
    assert stage_seeds(8)["transfer"] != a["transfer"]


def test_naive_builds_no_transferability_model(corpus):
    run = run_variant("naive_gail", corpus, DrivingConfig(), TINY, seed=0, eval_episodes=3)
    assert run.tmodel is None and run.assignment is None and run.weights is None
    assert run.weight_source == "uniform"


def test_without_clustering_uses_one_discriminator(corpus):
    run = run_variant("ours_wo_cluster", corpus, DrivingConfig(), TINY, seed=0, eval_episodes=3)
    assert len(run.tmodel.discriminators) == 1
    assert set(run.assignment.labels.values()) == {0}
    assert len(run.weights) == len(transitions(corpus))


@pytest.mark.parametrize("variant", ["ours", "kmeans_variant"])
def test_clustered_variants_weight_every_transition(corpus, variant):
    run = run_variant(variant, corpus, DrivingConfig(), TINY, seed=1, eval_episodes=3)
    assert run.assignment.K == 2
    assert np.all((run.weights > 0) & (run.weights < 1))
    rows = run.curve_rows()
    assert rows and all(r["variant"] == variant and r["seed"] == 1 for r in rows)


def test_naive_matches_uniform_final_stage(corpus):
    # the final stage uses the same stream for every variant
    naive = run_variant("naive_gail", corpus, DrivingConfig(), TINY, seed=4, eval_episodes=3)
    direct = train_weighted_gail(DrivingConfig(), corpus, None, TINY.rl, TINY.imitation,
                                 stage_seeds(4)["imitation"])
    assert _same_params(naive.policy, direct.policy)


def test_unknown_variant(corpus):
    with pytest.raises(ValueError):
        run_variant("dagger", corpus, DrivingConfig(), TINY, seed=0)
    assert len(VARIANTS) == 4


# --------------------------------------------------------------------------
# evaluation


def crash_policy(states):
    # steer for the middle of whichever obstacle is closer
    x = states[:, 0]
    target = np.where(x < 0.5375, 0.25, 0.75)
    return np.clip(10.0 * (target - x), -1.0, 1.0)


def nearest_gap_policy(config):
    rules = [gap_controller(config, g, noise=0.0) for g in config.gaps()]

    def act(states):
        out = []
        for s in states:
            act_fn, _ = min(rules, key=lambda r: abs(r[1] - s[0]))
            out.append(act_fn(s, None))
        return np.array(out)

    return act


def test_always_crash_policy():
    res = evaluate(crash_policy, DrivingEnv(), 50, np.random.default_rng(0))
    assert res["goal_rate"] == 0.0 and res["collision_rate"] == 1.0
    for ret, length in zip(res["returns"], res["lengths"]):
        assert ret <= -1000 - length + 1e-9


def test_scripted_rule_always_reaches_goal():
    cfg = DrivingConfig()
    res = evaluate(nearest_gap_policy(cfg), DrivingEnv(cfg), 100, np.random.default_rng(1))
    assert res["goal_rate"] == 1.0


def test_evaluation_deterministic_and_rates_sum_to_one():
    env = DrivingEnv()
    a = evaluate(crash_policy, env, 20, np.random.default_rng(5))
    b = evaluate(crash_policy, env, 20, np.random.default_rng(5))
    assert a == b
    rng = np.random.default_rng(6)
    c = evaluate(lambda s: rng.uniform(-1, 1, size=len(s)), env, 40, np.random.default_rng(7))
    assert c["goal_rate"] + c["collision_rate"] + c["timeout_rate"] == pytest.approx(1.0)
