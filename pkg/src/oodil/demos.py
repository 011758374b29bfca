"""State-only demonstration corpus: storage, transitions, sub-trajectory windows."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """A demonstrator episode as T+1 states.

    ``source_tag`` is bookkeeping for evaluation; learning code never reads it.
    """

    states: np.ndarray
    trajectory_id: str
    source_tag: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or len(self.states) < 2:
            raise ValueError(f"trajectory {self.trajectory_id!r} needs at least 2 states "
                             f"of shape (T+1, d), got {self.states.shape}")

    def __len__(self):
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


@dataclass
class Corpus:
    trajectories: list[Trajectory]

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("corpus is empty")
        dims = {t.state_dim for t in self.trajectories}
        if len(dims) != 1:
            raise ValueError(f"mixed state dimensions in corpus: {sorted(dims)}")
        ids = [t.trajectory_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate trajectory ids")

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].state_dim

    @property
    def ids(self) -> list[str]:
        return [t.trajectory_id for t in self.trajectories]

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def by_id(self) -> dict[str, Trajectory]:
        return {t.trajectory_id: t for t in self.trajectories}

    def subset(self, ids) -> "Corpus":
        keep = set(ids)
        return Corpus([t for t in self.trajectories if t.trajectory_id in keep])

    @classmethod
    def concat(cls, corpora) -> "Corpus":
        return cls([t for c in corpora for t in c.trajectories])


def save_corpus(corpus: Corpus, path) -> None:
    """One JSON object per line: ``{"id", "source_tag", "states"}``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in corpus.trajectories:
            fh.write(json.dumps({"id": t.trajectory_id, "source_tag": t.source_tag,
                                 "states": t.states.tolist()}))
            fh.write("\n")


def load_corpus(path) -> Corpus:
    trajs = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                states = np.asarray(rec["states"], dtype=np.float64)
                tid = str(rec["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
            if states.ndim != 2 or len(states) < 2:
                raise CorpusFormatError(f"{path}:{lineno}: states must be a list of >= 2 "
                                        f"equal-length vectors")
            if dim is not None and states.shape[1] != dim:
                raise CorpusFormatError(f"{path}:{lineno}: state dim {states.shape[1]} "
                                        f"!= {dim}")
            if not np.all(np.isfinite(states)):
                raise CorpusFormatError(f"{path}:{lineno}: non-finite state value")
            dim = states.shape[1]
            trajs.append(Trajectory(states, tid, str(rec.get("source_tag", ""))))
    if not trajs:
        raise CorpusFormatError(f"{path}: no trajectories")
    try:
        return Corpus(trajs)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# Transitions
# --------------------------------------------------------------------------


@dataclass
class Transitions:
    """Flat view of every (s_t, s_{t+1}) pair in a corpus, in corpus order."""

    traj_ids: list[str]
    traj_index: np.ndarray  # index into traj_ids, per transition
    t: np.ndarray
    s: np.ndarray
    s_next: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def pairs(self) -> np.ndarray:
        return np.concatenate([self.s, self.s_next], axis=1)

    def keys(self):
        return [(self.traj_ids[i], int(t)) for i, t in zip(self.traj_index, self.t)]

    def __iter__(self):
        for i in range(len(self)):
            yield self.traj_ids[self.traj_index[i]], int(self.t[i]), self.s[i], self.s_next[i]


def transitions(corpus: Corpus) -> Transitions:
    idx, ts, s, s_next = [], [], [], []
    for k, traj in enumerate(corpus.trajectories):
        n = len(traj) - 1
        idx.append(np.full(n, k))
        ts.append(np.arange(n))
        s.append(traj.states[:-1])
        s_next.append(traj.states[1:])
    return Transitions(corpus.ids, np.concatenate(idx), np.concatenate(ts),
                       np.concatenate(s), np.concatenate(s_next))


# --------------------------------------------------------------------------
# Sub-trajectories
# --------------------------------------------------------------------------


@dataclass
class SubTrajectory:
    parent_id: str
    start: int
    states: np.ndarray
    padded: bool = False
    meta: dict = field(default_factory=dict)


def padded_states(states: np.ndarray, length: int, stride: int = 1) -> tuple[np.ndarray, bool]:
    """Repeat the last state until a window of ``length`` at ``stride`` fits."""
    need = (length - 1) * stride + 1
    if len(states) >= need:
        return states, False
    pad = np.repeat(states[-1:], need - len(states), axis=0)
    return np.concatenate([states, pad]), True


def window(states: np.ndarray, start: int, length: int, stride: int = 1) -> np.ndarray:
    return states[start:start + (length - 1) * stride + 1:stride]


def n_windows(n_states: int, length: int, stride: int = 1) -> int:
    return max(n_states - (length - 1) * stride, 1)


def sample_window(traj: Trajectory, length: int, stride: int, rng: np.random.Generator) -> SubTrajectory:
    states, padded = padded_states(traj.states, length, stride)
    start = int(rng.integers(n_windows(len(states), length, stride)))
    return SubTrajectory(traj.trajectory_id, start, window(states, start, length, stride), padded)


def subsample_pair(traj: Trajectory, length: int, stride: int, rng: np.random.Generator):
    """Two independent uniformly placed windows of ``length`` states."""
    return sample_window(traj, length, stride, rng), sample_window(traj, length, stride, rng)
