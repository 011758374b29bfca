"""On-policy learner: tanh-squashed Gaussian policy, value baseline, GAE and a
clipped-surrogate update. Used for every GAIL loop in the package."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import GOAL, COLLISION, RUNNING, TIMEOUT, Env
from .numcore import (
    AdamState,
    MlpParams,
    adam_step,
    mlp_backward,
    mlp_forward,
    params_from_json,
    params_to_json,
)

LOG_STD_MIN, LOG_STD_MAX = -4.0, 1.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class RlHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 10
    steps_per_batch: int = 2048
    minibatch: int = 256
    policy_lr: float = 1e-3
    value_lr: float = 3e-3
    entropy_coef: float = 0.01
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -1.5
    n_envs: int = 16

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be positive")


@dataclass
class Policy:
    """Gaussian over a pre-squash action u; the environment receives tanh(u)."""

    net: MlpParams
    log_std: np.ndarray

    @classmethod
    def init(cls, state_dim: int, rng: np.random.Generator, hidden=(64, 64), init_log_std=-0.5):
        net = MlpParams.init([state_dim, *hidden, 1], "tanh", rng, out_scale=0.01)
        return cls(net, np.array([init_log_std]))

    def params(self) -> dict:
        d = {f"net/{k}": v for k, v in self.net.to_dict().items()}
        d["log_std"] = self.log_std
        return d

    def with_params(self, d: dict) -> "Policy":
        net = self.net.with_dict({k[4:]: v for k, v in d.items() if k.startswith("net/")})
        return Policy(net, np.clip(d["log_std"], LOG_STD_MIN, LOG_STD_MAX))

    def mean(self, states) -> np.ndarray:
        return mlp_forward(self.net, states)[..., 0]

    def sample(self, states, rng: np.random.Generator):
        """Returns (actions, u, log_prob_u)."""
        mu = self.mean(states)
        std = float(np.exp(self.log_std[0]))
        eps = rng.normal(size=mu.shape)
        u = mu + std * eps
        logp = -0.5 * eps * eps - self.log_std[0] - _HALF_LOG_2PI
        return np.tanh(u), u, logp

    def act_deterministic(self, states) -> np.ndarray:
        return np.tanh(self.mean(states))

    def log_prob(self, states, u) -> np.ndarray:
        mu = self.mean(states)
        z = (u - mu) / np.exp(self.log_std[0])
        return -0.5 * z * z - self.log_std[0] - _HALF_LOG_2PI

    def entropy(self) -> float:
        return float(self.log_std[0] + 0.5 + _HALF_LOG_2PI)

    def __call__(self, state, rng):
        # single-state interface used by envs.rollout
        return float(self.act_deterministic(np.asarray(state)[None])[0])

    def to_json(self) -> dict:
        return {"activations": self.net.activations, "params": params_to_json(self.params())}

    @classmethod
    def from_json(cls, doc: dict) -> "Policy":
        p = params_from_json(doc["params"])
        n = len(doc["activations"])
        net = MlpParams([p[f"net/W{i}"] for i in range(n)], [p[f"net/b{i}"] for i in range(n)],
                        list(doc["activations"]))
        return cls(net, p["log_std"])


@dataclass
class ValueFn:
    net: MlpParams

    @classmethod
    def init(cls, state_dim: int, rng: np.random.Generator, hidden=(64, 64)):
        return cls(MlpParams.init([state_dim, *hidden, 1], "tanh", rng))

    def __call__(self, states) -> np.ndarray:
        return mlp_forward(self.net, states)[..., 0]


@dataclass
class Learner:
    """Policy, baseline and their optimizer states, owned by one training loop."""

    policy: Policy
    value: ValueFn
    policy_opt: AdamState
    value_opt: AdamState

    @classmethod
    def init(cls, state_dim: int, hyper: RlHyper, rng: np.random.Generator):
        return cls(Policy.init(state_dim, rng, hyper.hidden, hyper.init_log_std),
                   ValueFn.init(state_dim, rng, hyper.hidden),
                   AdamState(lr=hyper.policy_lr), AdamState(lr=hyper.value_lr))


# --------------------------------------------------------------------------
# Experience
# --------------------------------------------------------------------------


@dataclass
class Batch:
    """Time-major experience of shape (T, E) for E parallel environments."""

    s: np.ndarray  # (T, E, d)
    u: np.ndarray  # (T, E) pre-squash action
    a: np.ndarray
    logp: np.ndarray
    r: np.ndarray  # reward used for learning
    env_r: np.ndarray  # true environment reward, for reporting only
    s_next: np.ndarray
    done: np.ndarray  # terminal: no bootstrap
    end: np.ndarray  # episode boundary (terminal or truncated)
    episode_returns: list = field(default_factory=list)
    episode_causes: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.u.size

    def flat(self, name):
        x = getattr(self, name)
        return x.reshape(self.u.size, *x.shape[2:])


def collect_batch(env: Env, policy: Policy, reward_fn, n_steps: int, rng: np.random.Generator,
                  n_envs: int = 16, starts: np.ndarray | None = None) -> Batch:
    """Roll ``policy`` for exactly ``n_steps`` transitions across auto-resetting
    environment copies. ``reward_fn(s, s_next)`` replaces the environment
    reward when given. ``starts`` replaces the environment's reset
    distribution with uniform draws from the given initial states."""
    E = math.gcd(n_steps, max(1, n_envs))
    T = n_steps // E
    d = env.state_dim
    S = np.empty((T, E, d))
    S2 = np.empty((T, E, d))
    U = np.empty((T, E))
    A = np.empty((T, E))
    LP = np.empty((T, E))
    ER = np.empty((T, E))
    C = np.empty((T, E), dtype=int)
    if starts is None:
        reset = env.reset
    else:
        starts = np.asarray(starts, dtype=np.float64).reshape(-1, env.state_dim)
        reset = lambda g, n: starts[g.integers(len(starts), size=n)].copy()
    states = reset(rng, E)
    t_ep = np.zeros(E, dtype=int)
    ret = np.zeros(E)
    ep_returns, ep_causes = [], []
    for t in range(T):
        a, u, lp = policy.sample(states, rng)
        nxt, r, cause = env.step(states, a, t_ep)
        cause = np.where((cause == RUNNING) & (t_ep + 1 >= env.max_steps), TIMEOUT, cause)
        S[t], S2[t], U[t], A[t], LP[t], ER[t], C[t] = states, nxt, u, a, lp, r, cause
        ret += r
        t_ep += 1
        ended = cause != RUNNING
        if np.any(ended):
            for e in np.flatnonzero(ended):
                ep_returns.append(float(ret[e]))
                ep_causes.append(int(cause[e]))
            ret[ended] = 0.0
            t_ep[ended] = 0
            nxt = nxt.copy()
            nxt[ended] = reset(rng, int(ended.sum()))
        states = nxt
    if reward_fn is None:
        R = ER.copy()
    else:
        R = np.asarray(reward_fn(S.reshape(-1, d), S2.reshape(-1, d)), dtype=np.float64).reshape(T, E)
    done = (C == GOAL) | (C == COLLISION)
    end = C != RUNNING
    return Batch(S, U, A, LP, R, ER, S2, done, end, ep_returns, ep_causes)


def gae_advantages(batch: Batch, value_fn, gamma: float, lam: float, normalize: bool = True):
    """Generalized advantage estimates and value targets, both (T, E).

    Episodes cut by a timeout or by the end of the batch bootstrap from V(s').
    """
    T, E = batch.u.shape
    d = batch.s.shape[-1]
    v = value_fn(batch.s.reshape(-1, d)).reshape(T, E)
    v_next = value_fn(batch.s_next.reshape(-1, d)).reshape(T, E)
    delta = batch.r + gamma * v_next * (~batch.done) - v
    adv = np.zeros((T, E))
    run = np.zeros(E)
    for t in reversed(range(T)):
        run = delta[t] + gamma * lam * run * (~batch.end[t])
        adv[t] = run
    returns = adv + v
    if normalize:
        std = adv.std()
        adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    return adv, returns


# --------------------------------------------------------------------------
# Update
# --------------------------------------------------------------------------


def surrogate_loss(policy: Policy, s, u, logp_old, adv, clip_ratio: float, entropy_coef: float):
    """Clipped surrogate (to minimise) and its gradient w.r.t. ``policy.params()``."""
    mu, cache = mlp_forward(policy.net, s, return_cache=True)
    mu = mu[..., 0]
    log_std = policy.log_std[0]
    std = math.exp(log_std)
    z = (u - mu) / std
    logp = -0.5 * z * z - log_std - _HALF_LOG_2PI
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    m = len(u)
    loss = -np.mean(np.minimum(ratio * adv, clipped * adv)) - entropy_coef * policy.entropy()
    active = ratio * adv <= clipped * adv
    dlogp = np.where(active, -adv * ratio / m, 0.0)
    dmu = dlogp * z / std
    grads, _ = mlp_backward(policy.net, s, dmu[:, None], cache)
    out = {f"net/{k}": v for k, v in grads.items()}
    out["log_std"] = np.array([np.sum(dlogp * (z * z - 1.0)) - entropy_coef])
    diag = {"approx_kl": float(np.mean(logp_old - logp)),
            "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_ratio))}
    return float(loss), out, diag


def value_loss(value: ValueFn, s, returns):
    v, cache = mlp_forward(value.net, s, return_cache=True)
    err = v[..., 0] - returns
    grads, _ = mlp_backward(value.net, s, (err / len(err))[:, None], cache)
    return 0.5 * float(np.mean(err * err)), grads


def policy_update(learner: Learner, batch: Batch, hyper: RlHyper, rng: np.random.Generator,
                  adv=None, returns=None):
    """Clipped-surrogate epochs plus value regression. Returns ``(learner, diagnostics)``.

    A non-finite loss aborts the whole update and returns the input learner.
    """
    if adv is None:
        adv, returns = gae_advantages(batch, learner.value, hyper.gamma, hyper.gae_lambda)
    s = batch.flat("s")
    u = batch.flat("u")
    lp = batch.flat("logp")
    adv = adv.reshape(-1)
    returns = returns.reshape(-1)
    pol, val = learner.policy, learner.value
    popt, vopt = learner.policy_opt, learner.value_opt
    n = len(u)
    mb = min(hyper.minibatch, n)
    kls, clips, vls = [], [], []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            loss, g, diag = surrogate_loss(pol, s[idx], u[idx], lp[idx], adv[idx],
                                           hyper.clip_ratio, hyper.entropy_coef)
            vl, vg = value_loss(val, s[idx], returns[idx])
            if not (np.isfinite(loss) and np.isfinite(vl)):
                return learner, {"aborted": True}
            new_p, popt = adam_step(pol.params(), g, popt)
            pol = pol.with_params(new_p)
            new_v, vopt = adam_step(val.net.to_dict(), vg, vopt)
            val = ValueFn(val.net.with_dict(new_v))
            kls.append(diag["approx_kl"])
            clips.append(diag["clip_frac"])
            vls.append(vl)
    diag = {"aborted": False, "approx_kl": float(np.mean(kls)), "clip_frac": float(np.mean(clips)),
            "value_loss": float(np.mean(vls)), "entropy": pol.entropy()}
    return Learner(pol, val, popt, vopt), diag


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def evaluate(policy, env: Env, n_episodes: int, rng: np.random.Generator,
             deterministic: bool = True) -> dict:
    """Undiscounted return statistics over independent episodes, run in lockstep.

    ``policy`` is a ``Policy`` or any ``f(states) -> actions`` over a batch.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    states = env.reset(rng, n_episodes)
    alive = np.ones(n_episodes, dtype=bool)
    returns = np.zeros(n_episodes)
    lengths = np.zeros(n_episodes, dtype=int)
    causes = np.full(n_episodes, RUNNING)
    for t in range(env.max_steps):
        idx = np.flatnonzero(alive)
        if not len(idx):
            break
        if isinstance(policy, Policy):
            a = policy.act_deterministic(states[idx]) if deterministic else policy.sample(states[idx], rng)[0]
        else:
            a = np.asarray(policy(states[idx]), dtype=np.float64)
        nxt, r, c = env.step(states[idx], a, np.full(len(idx), t))
        c = np.where((c == RUNNING) & (t + 1 >= env.max_steps), TIMEOUT, c)
        states[idx] = nxt
        returns[idx] += r
        lengths[idx] += 1
        causes[idx] = c
        alive[idx] = c == RUNNING
    return {
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "goal_rate": float(np.mean(causes == GOAL)),
        "collision_rate": float(np.mean(causes == COLLISION)),
        "timeout_rate": float(np.mean(causes == TIMEOUT)),
        "mean_length": float(lengths.mean()),
        "returns": returns.tolist(),
        "lengths": lengths.tolist(),
        "causes": causes.tolist(),
    }


def train_rl(env: Env, hyper: RlHyper, iterations: int, rng: np.random.Generator,
             reward_fn=None) -> Learner:
    """Plain policy optimisation on a fixed reward (environment reward by default)."""
    learner = Learner.init(env.state_dim, hyper, rng)
    for _ in range(iterations):
        batch = collect_batch(env, learner.policy, reward_fn, hyper.steps_per_batch, rng, hyper.n_envs)
        learner, _ = policy_update(learner, batch, hyper, rng)
    return learner


def hyper_dict(h) -> dict:
    d = asdict(h)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d
