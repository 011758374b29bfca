"""Sequence-based contrastive clustering of demonstration trajectories.

An LSTM encoder maps fixed-length sub-trajectories to unit vectors. Two
windows cut from the same trajectory form a positive pair, windows from
other trajectories in the batch are negatives. A K-means style term pulls
each feature towards its nearest centre, and the centres follow their
members with a count-based step size.

Centres are stored column-wise, ``centers.shape == (feature_dim, K)``.
Cluster labels are 0-based.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .demos import Corpus, sample_window
from .numcore import (
    AdamState,
    RecurrentParams,
    adam_step,
    check_finite,
    params_from_json,
    params_to_json,
    rnn_backward,
    rnn_encode,
)

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6


# --------------------------------------------------------------------------
# Losses and center updates
# --------------------------------------------------------------------------


def _check_unit(features):
    norms = np.linalg.norm(features, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("contrastive loss expects unit-norm features")


def contrastive_loss(features: np.ndarray, return_grad: bool = False):
    """Pairwise InfoNCE over rows (0,1), (2,3), ...; the first row of each
    pair is the anchor and every other row in the batch is a candidate.

    Similarity is the plain dot product of unit vectors (no temperature).
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) < 2 or len(f) % 2:
        raise ValueError("need an even number (>= 2) of feature rows")
    _check_unit(f)
    n = len(f) // 2
    anchors = f[0::2]
    sims = anchors @ f.T  # (N, 2N)
    mask = np.ones_like(sims, dtype=bool)
    mask[np.arange(n), 2 * np.arange(n)] = False
    logits = np.where(mask, sims, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    pos = sims[np.arange(n), 2 * np.arange(n) + 1]
    loss = float(np.mean(lse - pos))
    if not return_grad:
        return loss
    soft = np.where(mask, np.exp(logits - lse[:, None]), 0.0)  # (N, 2N)
    soft[np.arange(n), 2 * np.arange(n) + 1] -= 1.0
    grad = soft.T @ anchors  # d/d f_j through the candidate slot
    grad[0::2] += soft @ f  # d/d anchor
    return loss, grad / n


def assign(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest centre by Euclidean distance; ties go to the lowest index."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[1] != centers.shape[0]:
        raise ValueError(f"feature dim {f.shape[1]} != centre dim {centers.shape[0]}")
    d2 = ((f[:, :, None] - centers[None, :, :]) ** 2).sum(axis=1)
    return np.argmin(d2, axis=1)


def cluster_loss(features: np.ndarray, centers: np.ndarray, labels: np.ndarray, lam: float):
    """Contrastive loss plus ``lam/2`` times the batch-mean squared distance to
    the assigned centre. Centres and labels are held constant.

    Returns ``(loss, dL/dfeatures)``.
    """
    loss, grad = contrastive_loss(features, return_grad=True)
    if lam:
        diff = features - centers[:, labels].T
        loss += 0.5 * lam * float(np.mean(np.sum(diff * diff, axis=1)))
        grad = grad + lam * diff / len(features)
    return loss, grad


def update_centers(centers: np.ndarray, features: np.ndarray, labels: np.ndarray,
                   normalize: bool = True) -> np.ndarray:
    """c_k <- (1 - 1/m_k) c_k + (1/m_k) mean(members), then back to unit norm.

    Clusters without members keep their centre.
    """
    out = centers.copy()
    for k in np.unique(labels):
        members = features[labels == k]
        beta = 1.0 / len(members)
        c = (1.0 - beta) * centers[:, k] + beta * members.mean(axis=0)
        if normalize:
            norm = np.linalg.norm(c)
            if norm > 0:
                c = c / norm
        out[:, k] = c
    return out


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass
class ClusterHyper:
    K: int = 10
    sub_len: int = 15
    stride: int = 1
    lam: float = 0.01
    lr: float = 0.01
    hidden: int = 128
    batch_trajectories: int = 64
    pretrain_iters: int = 200
    joint_iters: int = 2000


@dataclass
class ClusterModel:
    encoder: RecurrentParams
    centers: np.ndarray
    hyper: ClusterHyper
    history: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.centers.shape[1]

    def encode(self, windows: np.ndarray) -> np.ndarray:
        return rnn_encode(self.encoder, windows)

    def to_json(self) -> dict:
        params = {f"encoder/{k}": v for k, v in self.encoder.to_dict().items()}
        params["centers"] = self.centers
        return {"kind": "cluster_model", "hyper": asdict(self.hyper),
                "params": params_to_json(params)}

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterModel":
        p = params_from_json(doc["params"])
        enc = RecurrentParams(p["encoder/W_x"], p["encoder/W_h"], p["encoder/b"])
        return cls(enc, p["centers"], ClusterHyper(**doc["hyper"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ClusterModel":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ClusterAssignment:
    labels: dict[str, int]
    K: int

    def __post_init__(self):
        bad = {k: v for k, v in self.labels.items() if not 0 <= v < self.K}
        if bad:
            raise ValueError(f"labels out of range 0..{self.K - 1}: {bad}")

    def members(self, k: int) -> list[str]:
        return [tid for tid, lab in self.labels.items() if lab == k]

    def sizes(self) -> list[int]:
        return [len(self.members(k)) for k in range(self.K)]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"K": self.K, "labels": self.labels}, indent=1))

    @classmethod
    def load(cls, path) -> "ClusterAssignment":
        doc = json.loads(Path(path).read_text())
        return cls({str(k): int(v) for k, v in doc["labels"].items()}, int(doc["K"]))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _pair_batch(corpus: Corpus, idx, hyper: ClusterHyper, rng):
    rows = []
    for i in idx:
        traj = corpus.trajectories[i]
        rows.append(sample_window(traj, hyper.sub_len, hyper.stride, rng).states)
        rows.append(sample_window(traj, hyper.sub_len, hyper.stride, rng).states)
    return np.stack(rows)


def _encoder_step(params, adam, batch, centers, labels_fn, lam):
    feats, cache = rnn_encode(params, batch, return_cache=True)
    if centers is None:
        loss, dF = contrastive_loss(feats, return_grad=True)
    else:
        loss, dF = cluster_loss(feats, centers, labels_fn(feats), lam)
    if not np.isfinite(loss):
        raise FloatingPointError("clustering loss became non-finite")
    grads = rnn_backward(params, batch, dF, cache)
    new, adam = adam_step(params.to_dict(), grads, adam)
    return params.with_dict(new), adam, loss


def train_scc(corpus: Corpus, hyper: ClusterHyper, rng: np.random.Generator,
              log_every: int = 0) -> ClusterModel:
    n = len(corpus)
    if hyper.K < 1 or hyper.K > n:
        raise ValueError(f"K={hyper.K} must be in 1..{n} (number of trajectories)")
    params = RecurrentParams.init(corpus.state_dim, hyper.hidden, rng)
    adam = AdamState(lr=hyper.lr)
    N = min(hyper.batch_trajectories, n)
    history = {"pretrain_loss": [], "joint_loss": []}

    for it in range(hyper.pretrain_iters):
        batch = _pair_batch(corpus, rng.choice(n, size=N, replace=False), hyper, rng)
        params, adam, loss = _encoder_step(params, adam, batch, None, None, 0.0)
        history["pretrain_loss"].append(loss)
        if log_every and it % log_every == 0:
            log.info("pretrain %d contrast %.4f", it, loss)

    seeds = rng.choice(n, size=hyper.K, replace=False)
    init = np.stack([sample_window(corpus.trajectories[i], hyper.sub_len, hyper.stride, rng).states
                     for i in seeds])
    centers = rnn_encode(params, init).T.copy()

    for it in range(hyper.joint_iters):
        batch = _pair_batch(corpus, rng.choice(n, size=N, replace=False), hyper, rng)
        params, adam, loss = _encoder_step(params, adam, batch, centers,
                                           lambda f: assign(f, centers), hyper.lam)
        feats = rnn_encode(params, batch)
        centers = update_centers(centers, feats, assign(feats, centers))
        history["joint_loss"].append(loss)
        if log_every and it % log_every == 0:
            log.info("joint %d cluster loss %.4f", it, loss)

    check_finite(centers, "cluster centres")
    return ClusterModel(params, centers, hyper, history)


def label_corpus(model: ClusterModel, corpus: Corpus, rng: np.random.Generator) -> ClusterAssignment:
    """Label every trajectory from one uniformly drawn window. Inference only."""
    if corpus.state_dim != model.encoder.input_dim:
        raise ValueError(f"corpus state dim {corpus.state_dim} != encoder input "
                         f"{model.encoder.input_dim}")
    h = model.hyper
    wins = np.stack([sample_window(t, h.sub_len, h.stride, rng).states for t in corpus])
    labels = assign(model.encode(wins), model.centers)
    return ClusterAssignment({tid: int(k) for tid, k in zip(corpus.ids, labels)}, model.K)


def purity(assignment: ClusterAssignment, tags: dict[str, str]) -> float:
    clusters: dict[int, dict[str, int]] = {}
    for tid, lab in assignment.labels.items():
        counts = clusters.setdefault(lab, {})
        counts[tags[tid]] = counts.get(tags[tid], 0) + 1
    total = sum(sum(c.values()) for c in clusters.values())
    return sum(max(c.values()) for c in clusters.values()) / total


# --------------------------------------------------------------------------
# K-means on raw windows
# --------------------------------------------------------------------------


def lloyd(X: np.ndarray, K: int, rng: np.random.Generator, n_init: int = 5,
          max_iter: int = 300) -> np.ndarray:
    """Plain Lloyd iterations from k-means++ seeds; best of ``n_init`` by inertia."""
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = [X[rng.integers(len(X))]]
        for _ in range(1, K):
            d2 = np.min(((X[:, None] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            p = d2 / d2.sum() if d2.sum() > 0 else None
            centers.append(X[rng.choice(len(X), p=p)])
        C = np.array(centers)
        labels = None
        for _ in range(max_iter):
            d2 = ((X[:, None] - C[None]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for k in range(K):
                if np.any(labels == k):
                    C[k] = X[labels == k].mean(axis=0)
        inertia = float(((X - C[labels]) ** 2).sum())
        if inertia < best_inertia:
            best, best_inertia = labels, inertia
    return best


def kmeans_baseline(corpus: Corpus, K: int, sub_len: int, stride: int,
                    rng: np.random.Generator) -> ClusterAssignment:
    """K-means over one flattened fixed-stride window per trajectory."""
    if K < 1 or K > len(corpus):
        raise ValueError(f"K={K} must be in 1..{len(corpus)}")
    X = np.stack([sample_window(t, sub_len, stride, rng).states.reshape(-1) for t in corpus])
    labels = lloyd(X, K, rng)
    return ClusterAssignment({tid: int(k) for tid, k in zip(corpus.ids, labels)}, K)
