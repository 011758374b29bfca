"""Final imitation on the whole corpus with transferability-weighted demo
sampling, plus the ablation variants it is compared against."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterAssignment, ClusterHyper, kmeans_baseline, label_corpus, train_scc
from .demos import Corpus, transitions
from .envs import make_env
from .rl import Policy, RlHyper, evaluate
from .transfer import (
    DemoSampler,
    GailHyper,
    GailResult,
    PairFeatures,
    SamplingDistribution,
    TransferabilityModel,
    run_gail,
    sampling_distribution,
    train_transferability,
    transition_weights,
)

log = logging.getLogger(__name__)

VARIANTS = ("ours", "ours_wo_cluster", "naive_gail", "kmeans_variant")

__all__ = ["VARIANTS", "PipelineHyper", "ImitationRun", "train_weighted_gail", "run_variant",
           "stage_seeds", "evaluate"]


@dataclass
class PipelineHyper:
    """Everything ``run_variant`` needs besides data and environment."""

    cluster: ClusterHyper = field(default_factory=ClusterHyper)
    rl: RlHyper = field(default_factory=RlHyper)
    transfer: GailHyper = field(default_factory=GailHyper)
    imitation: GailHyper = field(
        default_factory=lambda: GailHyper(iterations=300, eval_every=10, eval_episodes=20))
    workers: int = 1


@dataclass
class ImitationRun:
    variant: str
    seed: int
    weight_source: str
    policy: Policy
    curve: list[dict]
    final: dict
    assignment: ClusterAssignment | None = None
    tmodel: TransferabilityModel | None = None
    weights: np.ndarray | None = None
    cluster_model: object = None
    timings: dict = field(default_factory=dict)

    def curve_rows(self) -> list[dict]:
        return [{"variant": self.variant, "seed": self.seed, **row} for row in self.curve]


def stage_seeds(seed: int) -> dict:
    """Independent streams for clustering, transfer and the final GAIL run.

    The final-stage stream is the same for every variant, so two variants
    that end up with the same p_w perform the same run.
    """
    c, t, i = np.random.SeedSequence(seed).spawn(3)
    return {"cluster": np.random.default_rng(c),
            "transfer": int(t.generate_state(1)[0]),
            "imitation": np.random.default_rng(i)}


def train_weighted_gail(target_env, corpus: Corpus, p_w, rl_hyper: RlHyper,
                        gail_hyper: GailHyper, rng: np.random.Generator) -> GailResult:
    """GAIL against the whole corpus with demo transitions drawn from ``p_w``.

    ``p_w`` is a probability per transition in ``demos.transitions`` order (a
    ``SamplingDistribution`` or a plain vector); None means uniform. The
    discriminator is freshly initialised.
    """
    pairs = transitions(corpus).pairs
    probs = p_w.probs if isinstance(p_w, SamplingDistribution) else p_w
    if probs is not None and len(probs) != len(pairs):
        raise ValueError(f"p_w has {len(probs)} entries for {len(pairs)} transitions")
    sampler = DemoSampler(pairs, probs)
    features = PairFeatures.fit(pairs)
    return run_gail(make_env(target_env), sampler, rl_hyper, gail_hyper, rng, features)


def run_variant(variant: str, corpus: Corpus, target_env, hyper: PipelineHyper, seed: int,
                eval_episodes: int = 100) -> ImitationRun:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    rngs = stage_seeds(seed)
    assignment = tmodel = weights = cmodel = None
    p_w = None
    timings = {}
    t0 = time.perf_counter()
    if variant != "naive_gail":
        if variant == "ours":
            cmodel = train_scc(corpus, hyper.cluster, rngs["cluster"])
            assignment = label_corpus(cmodel, corpus, rngs["cluster"])
        elif variant == "kmeans_variant":
            h = hyper.cluster
            assignment = kmeans_baseline(corpus, h.K, h.sub_len, h.stride, rngs["cluster"])
        else:
            assignment = ClusterAssignment({tid: 0 for tid in corpus.ids}, 1)
        log.info("%s: cluster sizes %s", variant, assignment.sizes())
        timings["cluster"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        tmodel = train_transferability(target_env, corpus, assignment, hyper.rl, hyper.transfer,
                                       rngs["transfer"], hyper.workers)
        _, weights = transition_weights(tmodel, corpus)
        p_w = sampling_distribution(weights)
        timings["transfer"] = time.perf_counter() - t0
        t0 = time.perf_counter()
    res = train_weighted_gail(target_env, corpus, p_w, hyper.rl, hyper.imitation, rngs["imitation"])
    final = evaluate(res.policy, make_env(target_env), eval_episodes, np.random.default_rng(seed))
    timings["imitation"] = time.perf_counter() - t0
    return ImitationRun(variant, seed, "uniform" if p_w is None else f"transferability/{variant}",
                        res.policy, res.trace["curve"], final, assignment, tmodel, weights, cmodel,
                        timings)
