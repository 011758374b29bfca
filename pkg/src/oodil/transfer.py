"""Per-cluster adversarial transferability.

For every cluster of demonstrations a GAIL policy/discriminator pair is
trained in the imitator's own environment. Demonstration transitions are
labelled 0 and policy transitions 1, so after training a discriminator
output near 1 on a demonstration transition means the imitator can produce
it. That output is the transition's transferability weight.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cluster import ClusterAssignment, ClusterModel, assign
from .demos import Corpus, sample_window, transitions
from .envs import Env, make_env
from .numcore import (
    AdamState,
    MlpParams,
    adam_step,
    log_sigmoid,
    mlp_backward,
    mlp_forward,
    params_from_json,
    params_to_json,
    sigmoid,
)
from .rl import Learner, Policy, RlHyper, collect_batch, policy_update

log = logging.getLogger(__name__)


@dataclass
class PairFeatures:
    """Fixed standardisation of a transition as ``[s, s' - s]``.

    A linear map of the concatenated pair, so the discriminator stays a
    function of (s_t, s_{t+1}); it only rescales the small step deltas.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, state_dim: int):
        return cls(np.zeros(2 * state_dim), np.ones(2 * state_dim))

    @classmethod
    def fit(cls, pairs: np.ndarray, floor: float = 1e-3):
        f = cls.identity(pairs.shape[1] // 2).raw(pairs)
        return cls(f.mean(axis=0), np.maximum(f.std(axis=0), floor))

    @staticmethod
    def raw(pairs):
        d = pairs.shape[-1] // 2
        return np.concatenate([pairs[..., :d], pairs[..., d:] - pairs[..., :d]], axis=-1)

    def __call__(self, pairs):
        return (self.raw(np.asarray(pairs, dtype=np.float64)) - self.mean) / self.scale

    def to_json(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(np.asarray(doc["mean"], float), np.asarray(doc["scale"], float))


@dataclass
class Discriminator:
    """Logit network on the (standardised) transition (s_t, s_{t+1})."""

    net: MlpParams
    features: PairFeatures

    @classmethod
    def init(cls, state_dim: int, rng: np.random.Generator, hidden=(64, 64), features=None):
        net = MlpParams.init([2 * state_dim, *hidden, 1], "tanh", rng)
        return cls(net, features or PairFeatures.identity(state_dim))

    def logits(self, pairs, return_cache: bool = False):
        out = mlp_forward(self.net, self.features(pairs), return_cache=return_cache)
        if return_cache:
            return out[0][..., 0], out[1]
        return out[..., 0]

    def __call__(self, pairs) -> np.ndarray:
        return sigmoid(self.logits(pairs))

    def reward(self, s, s_next) -> np.ndarray:
        """-log D(s, s'): large when the pair looks like a demonstration."""
        return -log_sigmoid(self.logits(np.concatenate([s, s_next], axis=-1)))

    def with_net(self, net: MlpParams) -> "Discriminator":
        return Discriminator(net, self.features)

    def to_json(self) -> dict:
        return {"activations": self.net.activations, "params": params_to_json(self.net.to_dict()),
                "features": self.features.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "Discriminator":
        p = params_from_json(doc["params"])
        n = len(doc["activations"])
        net = MlpParams([p[f"W{i}"] for i in range(n)], [p[f"b{i}"] for i in range(n)],
                        list(doc["activations"]))
        return cls(net, PairFeatures.from_json(doc["features"]))


def discriminator_loss(disc: Discriminator, demo_pairs, policy_pairs, return_grad: bool = False):
    """-(mean log(1 - D(demo)) + mean log D(policy))."""
    if len(demo_pairs) == 0 or len(policy_pairs) == 0:
        raise ValueError("discriminator loss needs demo and policy transitions")
    nd = len(demo_pairs)
    x = disc.features(np.concatenate([demo_pairs, policy_pairs]))
    z, cache = mlp_forward(disc.net, x, return_cache=True)
    z = z[..., 0]
    zd, zp = z[:nd], z[nd:]
    loss = -(np.mean(log_sigmoid(-zd)) + np.mean(log_sigmoid(zp)))
    if not return_grad:
        return float(loss)
    dz = np.concatenate([sigmoid(zd) / nd, (sigmoid(zp) - 1.0) / len(zp)])
    grads, _ = mlp_backward(disc.net, x, dz[:, None], cache)
    return float(loss), grads


# --------------------------------------------------------------------------
# GAIL loop
# --------------------------------------------------------------------------


@dataclass
class GailHyper:
    iterations: int = 150
    disc_lr: float = 3e-4
    disc_minibatch: int = 256
    disc_hidden: tuple[int, ...] = (64, 64)
    eval_every: int = 0
    eval_episodes: int = 20

    def __post_init__(self):
        self.disc_hidden = tuple(self.disc_hidden)


class DemoSampler:
    """Draws demonstration transitions i.i.d. from ``probs`` (uniform if None).

    Both cases go through the same ``rng.choice`` call so a uniform
    distribution reproduces the unweighted sampler draw for draw.
    """

    def __init__(self, pairs: np.ndarray, probs: np.ndarray | None = None):
        self.pairs = np.asarray(pairs, dtype=np.float64)
        if not len(self.pairs):
            raise ValueError("no demonstration transitions to sample from")
        if probs is None:
            probs = np.full(len(self.pairs), 1.0 / len(self.pairs))
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(self.pairs),) or np.any(probs < 0) or not np.isfinite(probs).all():
            raise ValueError("sampling probabilities must be finite, non-negative, one per transition")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"sampling probabilities sum to {probs.sum()}, not 1")
        self.probs = probs

    def indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self.pairs), size=n, p=self.probs)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pairs[self.indices(n, rng)]


@dataclass
class GailResult:
    policy: Policy
    discriminator: Discriminator
    trace: dict = field(default_factory=dict)


def run_gail(env: Env, sampler: DemoSampler, rl_hyper: RlHyper, gail_hyper: GailHyper,
             rng: np.random.Generator, features: PairFeatures | None = None,
             evaluate_fn=None, starts: np.ndarray | None = None) -> GailResult:
    """Alternate policy rollouts, one discriminator epoch and a policy update.

    The policy is rewarded with -log D(s, s') from the discriminator as it was
    when the batch was collected. ``starts`` optionally fixes the pool of
    initial states for training rollouts (evaluation always uses env resets).
    """
    from .rl import evaluate

    d = env.state_dim
    learner = Learner.init(d, rl_hyper, rng)
    disc = Discriminator.init(d, rng, gail_hyper.disc_hidden, features)
    dopt = AdamState(lr=gail_hyper.disc_lr)
    trace = {"disc_loss": [], "curve": []}
    for it in range(gail_hyper.iterations):
        batch = collect_batch(env, learner.policy, disc.reward, rl_hyper.steps_per_batch, rng,
                              rl_hyper.n_envs, starts)
        pol_pairs = np.concatenate([batch.flat("s"), batch.flat("s_next")], axis=1)
        disc, dopt, losses = _disc_epoch(disc, dopt, pol_pairs, sampler, gail_hyper.disc_minibatch, rng)
        trace["disc_loss"].append(float(np.mean(losses)))
        learner, _ = policy_update(learner, batch, rl_hyper, rng)
        if gail_hyper.eval_every and (it + 1) % gail_hyper.eval_every == 0:
            stats = (evaluate_fn or evaluate)(learner.policy, env, gail_hyper.eval_episodes,
                                              np.random.default_rng(it))
            trace["curve"].append({"iteration": it + 1,
                                   "env_steps": (it + 1) * rl_hyper.steps_per_batch,
                                   "mean_return": stats["mean_return"],
                                   "goal_rate": stats["goal_rate"]})
    return GailResult(learner.policy, disc, trace)


def _disc_epoch(disc, dopt, pol_pairs, sampler, mb, rng):
    order = rng.permutation(len(pol_pairs))
    losses = []
    for start in range(0, len(order), mb):
        p = pol_pairs[order[start:start + mb]]
        demo = sampler.draw(len(p), rng)
        loss, grads = discriminator_loss(disc, demo, p, return_grad=True)
        new, dopt = adam_step(disc.net.to_dict(), grads, dopt)
        disc = disc.with_net(disc.net.with_dict(new))
        losses.append(loss)
    return disc, dopt, losses


def train_cluster_gail(target_env, cluster_pairs: np.ndarray, rl_hyper: RlHyper,
                       gail_hyper: GailHyper, rng: np.random.Generator,
                       features: PairFeatures | None = None,
                       starts: np.ndarray | None = None) -> GailResult:
    """GAIL on one cluster's transitions, drawn uniformly.

    With ``starts`` (the cluster's initial demo states) the policy tries to
    reproduce the demonstrations from where they began, so states the
    demonstrators never started from do not dilute the discriminator.
    """
    if len(cluster_pairs) == 0:
        raise ValueError("cluster has no demonstration transitions")
    return run_gail(make_env(target_env), DemoSampler(cluster_pairs), rl_hyper, gail_hyper, rng,
                    features, starts=starts)


# --------------------------------------------------------------------------
# Transferability model
# --------------------------------------------------------------------------


@dataclass
class TransferabilityModel:
    discriminators: dict[int, Discriminator]
    assignment: ClusterAssignment
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = {k for k in self.assignment.labels.values()} - set(self.discriminators)
        if missing:
            raise ValueError(f"clusters without a discriminator: {sorted(missing)}")

    def save(self, path) -> None:
        doc = {"kind": "transferability_model",
               "K": self.assignment.K,
               "labels": self.assignment.labels,
               "discriminators": {str(k): d.to_json() for k, d in sorted(self.discriminators.items())},
               "meta": self.meta}
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path) -> "TransferabilityModel":
        doc = json.loads(Path(path).read_text())
        discs = {int(k): Discriminator.from_json(v) for k, v in doc["discriminators"].items()}
        return cls(discs, ClusterAssignment(doc["labels"], doc["K"]), doc.get("meta", {}))


def transferability(model: TransferabilityModel, s, s_next, label: int):
    """Weight of transitions whose trajectory sits in cluster ``label``."""
    if label not in model.discriminators:
        raise KeyError(f"no discriminator for cluster {label}")
    pairs = np.concatenate([np.atleast_2d(s), np.atleast_2d(s_next)], axis=-1)
    w = model.discriminators[label](pairs)
    return float(w[0]) if np.ndim(s) == 1 else w


def transition_weights(model: TransferabilityModel, corpus: Corpus, labels: dict[str, int] | None = None):
    """Weight for every transition of ``corpus`` in ``demos.transitions`` order."""
    labels = model.assignment.labels if labels is None else labels
    tr = transitions(corpus)
    w = np.empty(len(tr))
    per_traj = np.array([labels[tid] for tid in tr.traj_ids])[tr.traj_index]
    pairs = tr.pairs
    for k in np.unique(per_traj):
        sel = per_traj == k
        if int(k) not in model.discriminators:
            raise KeyError(f"no discriminator for cluster {k}")
        w[sel] = model.discriminators[int(k)](pairs[sel])
    return tr, w


@dataclass
class SamplingDistribution:
    keys: list
    probs: np.ndarray

    def __post_init__(self):
        if len(self.keys) != len(self.probs):
            raise ValueError("one probability per transition key")


def sampling_distribution(weights, keys=None) -> SamplingDistribution:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or not len(w) or not np.isfinite(w).all():
        raise ValueError("weights must be a non-empty finite vector")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all transferability weights are zero")
    keys = list(range(len(w))) if keys is None else list(keys)
    return SamplingDistribution(keys, w / total)


def _cluster_job(args):
    k, pairs, starts, env_spec, rl_hyper, gail_hyper, seed_seq, features = args
    res = train_cluster_gail(env_spec, pairs, rl_hyper, gail_hyper, np.random.default_rng(seed_seq),
                             features, starts)
    return k, res.discriminator, res.trace["disc_loss"]


def train_transferability(target_env, corpus: Corpus, assignment: ClusterAssignment,
                          rl_hyper: RlHyper, gail_hyper: GailHyper, seed: int,
                          workers: int = 1) -> TransferabilityModel:
    """One GAIL run per non-empty cluster; each sees only its own trajectories.

    Seeds come from ``SeedSequence(seed).spawn(K)`` indexed by cluster, so the
    result does not depend on ``workers``.
    """
    env_spec = target_env.config if isinstance(target_env, Env) else target_env
    children = np.random.SeedSequence(seed).spawn(assignment.K)
    # one standardisation for every cluster, fitted on the whole corpus
    features = PairFeatures.fit(transitions(corpus).pairs)
    jobs, seen = [], {}
    for k in range(assignment.K):
        ids = assignment.members(k)
        if not ids:
            continue
        sub = corpus.subset(ids)
        seen[k] = sorted(sub.ids)
        starts = np.stack([t.states[0] for t in sub])
        jobs.append((k, transitions(sub).pairs, starts, env_spec, rl_hyper, gail_hyper, children[k], features))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cluster_job, jobs))
    else:
        results = [_cluster_job(j) for j in jobs]
    discs = {k: d for k, d, _ in results}
    meta = {"trajectories_per_cluster": seen,
            "disc_loss": {str(k): trace for k, _, trace in results},
            "rl_hyper": _plain(rl_hyper), "gail_hyper": _plain(gail_hyper), "seed": seed}
    return TransferabilityModel(discs, assignment, meta)


def _plain(h) -> dict:
    d = asdict(h)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def score_new(cluster_model: ClusterModel, tmodel: TransferabilityModel, new_corpus: Corpus,
              rng: np.random.Generator):
    """Label unseen trajectories with the frozen encoder and weight their
    transitions with the frozen discriminators. Nothing is trained.

    Clusters that were empty at training time have no discriminator, so new
    trajectories are assigned among the centres that do.
    """
    if new_corpus.state_dim != cluster_model.encoder.input_dim:
        raise ValueError(f"state dim {new_corpus.state_dim} != model input "
                         f"{cluster_model.encoder.input_dim}")
    h = cluster_model.hyper
    wins = np.stack([sample_window(t, h.sub_len, h.stride, rng).states for t in new_corpus])
    feats = cluster_model.encode(wins)
    usable = np.array(sorted(tmodel.discriminators))
    labels = usable[assign(feats, cluster_model.centers[:, usable])]
    label_map = {tid: int(k) for tid, k in zip(new_corpus.ids, labels)}
    tr, w = transition_weights(tmodel, new_corpus, label_map)
    return tr, w, label_map
