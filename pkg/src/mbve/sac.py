"""Soft Actor-Critic: tanh-Gaussian policy, twin critics with Polyak targets,
learned entropy temperature.

Critics are stored as one stacked ``MlpParams`` with a leading axis of size
2 (``twin``) or 1 (``single``), so both are evaluated by one batched matmul.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .numerics import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    MlpParams,
    SquashedGaussian,
    adam_init,
    adam_step,
    init_mlp,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    squashed_gaussian_sample_logprob,
)

ALPHA_MODES = ("learned", "fixed")
CRITIC_MODES = ("twin", "single")


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    target_entropy: float | None = None  # None -> -action_dim
    batch_size: int = 256
    alpha_mode: str = "learned"
    init_alpha: float = 1.0
    hidden: tuple = (128, 128)
    critic_mode: str = "twin"
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError("tau must lie in (0, 1]")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigurationError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.critic_mode not in CRITIC_MODES:
            raise ConfigurationError(f"critic_mode must be one of {CRITIC_MODES}")
        if self.init_alpha <= 0:
            raise ConfigurationError("init_alpha must be positive")


@dataclass
class AgentParams:
    policy: MlpParams
    critics: MlpParams
    target_critics: MlpParams
    log_alpha: np.ndarray  # shape ()
    state_dim: int
    action_dim: int

    def __post_init__(self):
        if self.critics.shapes != self.target_critics.shapes:
            raise ConfigurationError("critic and target-critic shapes differ")

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def num_critics(self) -> int:
        return self.critics.ensemble_shape[0]

    def critic(self, i: int) -> MlpParams:
        return self.critics.member(i)


def init_agent(state_dim: int, action_dim: int, cfg: SacConfig, rng: np.random.Generator, dtype=np.float32) -> AgentParams:
    k = 2 if cfg.critic_mode == "twin" else 1
    policy = init_mlp((state_dim, *cfg.hidden, 2 * action_dim), rng, dtype=dtype)
    critics = init_mlp((state_dim + action_dim, *cfg.hidden, 1), rng, ensemble=k, dtype=dtype)
    log_alpha = np.array(np.log(cfg.init_alpha), dtype=dtype)
    return AgentParams(policy, critics, critics.copy(), log_alpha, state_dim, action_dim)


def policy_dist(agent: AgentParams, states: np.ndarray, cache: bool = False, cfg: SacConfig | None = None):
    lo = cfg.log_std_min if cfg else LOG_STD_MIN
    hi = cfg.log_std_max if cfg else LOG_STD_MAX
    x = np.asarray(states, dtype=agent.policy.dtype)
    out, c = mlp_forward(agent.policy, x, return_cache=True)
    m = agent.action_dim
    dist = SquashedGaussian(out[:, :m], out[:, m:], lo, hi)
    return (dist, c) if cache else dist


def deterministic_action(agent: AgentParams, states: np.ndarray) -> np.ndarray:
    return policy_dist(agent, states).mode()


def make_sampler(agent: AgentParams, cfg: SacConfig | None = None):
    """``sampler(states, rng) -> (actions, log_probs)``, the policy as a rollout driver."""

    def sampler(states, rng):
        dist = policy_dist(agent, states, cfg=cfg)
        noise = rng.standard_normal(dist.mean.shape).astype(dist.mean.dtype, copy=False)
        return squashed_gaussian_sample_logprob(dist, noise)

    return sampler


def q_values(critics: MlpParams, states, actions) -> np.ndarray:
    """All critics' estimates, shape ``[K, B]``."""
    dtype = critics.dtype
    x = np.concatenate([np.asarray(states, dtype=dtype), np.asarray(actions, dtype=dtype)], axis=-1)
    return mlp_forward(critics, x)[..., 0]


def make_q_fn(agent: AgentParams, mode: str = "twin_min_target"):
    """Bootstrap critic for expansion targets (target networks)."""

    def q_fn(states, actions):
        q = q_values(agent.target_critics, states, actions)
        return q.min(axis=0) if mode == "twin_min_target" else q[0]

    return q_fn


# ---------------------------------------------------------------- losses


def _check(value, what):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}: {value!r}")


def actor_loss(agent: AgentParams, states, rng=None, noise=None, cfg: SacConfig | None = None, with_grad: bool = False):
    """``mean(alpha log pi(a|s) - min_i Q_i(s, a))`` with ``a`` reparameterised.

    Returns ``(loss, mean_entropy)``; with ``with_grad`` also the policy
    gradient and the sampled log-probabilities. Critics and alpha are constants.
    """
    dist, pcache = policy_dist(agent, states, cache=True, cfg=cfg)
    if noise is None:
        noise = rng.standard_normal(dist.mean.shape)
    noise = np.asarray(noise, dtype=dist.mean.dtype)
    action, log_prob = squashed_gaussian_sample_logprob(dist, noise)
    alpha = agent.alpha
    b, n = action.shape[0], agent.state_dim

    x = np.concatenate([np.asarray(states, dtype=agent.critics.dtype), action], axis=-1)
    q, qcache = mlp_forward(agent.critics, x, return_cache=True)
    q = q[..., 0]
    best = q.argmin(axis=0)
    q_min = q[best, np.arange(b)]
    loss = float(np.mean(alpha * log_prob - q_min))
    _check(loss, "actor loss")
    entropy = float(-np.mean(log_prob))
    if not with_grad:
        return loss, entropy

    dq = np.zeros_like(q)
    dq[best, np.arange(b)] = -1.0 / b
    _, dx = mlp_backward(agent.critics, qcache, dq[..., None])
    d_action = dx.sum(axis=0)[:, n:]
    std = dist.std
    d_u = alpha * 2.0 * action / b + d_action * (1.0 - action * action)
    d_mean = d_u
    inside = (dist.raw_log_std > dist.log_std_min) & (dist.raw_log_std < dist.log_std_max)
    d_logstd = (d_u * std * noise - alpha / b) * inside
    gpol, _ = mlp_backward(agent.policy, pcache, np.concatenate([d_mean, d_logstd], axis=-1))
    return loss, entropy, gpol, log_prob


def critic_loss(agent: AgentParams, states, actions, targets, with_grad: bool = False):
    """Mean over the batch and over critics of ``0.5 (target - Q_i(s, a))^2``."""
    targets = np.asarray(targets)
    if targets.shape != (np.shape(states)[0],):
        raise ConfigurationError(f"targets shape {targets.shape} does not match batch {np.shape(states)[0]}")
    dtype = agent.critics.dtype
    x = np.concatenate([np.asarray(states, dtype=dtype), np.asarray(actions, dtype=dtype)], axis=-1)
    q, cache = mlp_forward(agent.critics, x, return_cache=True)
    resid = q[..., 0] - targets.astype(dtype)
    k, b = resid.shape
    loss = float(0.5 * np.mean(resid * resid))
    _check(loss, "critic loss")
    if not with_grad:
        return loss
    grads, _ = mlp_backward(agent.critics, cache, (resid / (k * b))[..., None])
    return loss, grads


def temperature_loss(agent: AgentParams, target_entropy: float, states=None, rng=None, log_probs=None, with_grad: bool = False):
    """``-log_alpha * mean(log pi(a|s) + target_entropy)``; gradient w.r.t. log_alpha only.

    Pass ``log_probs`` to reuse actions already sampled for this update.
    """
    if log_probs is None:
        _, log_probs = make_sampler(agent)(states, rng)
    slack = float(np.mean(log_probs) + target_entropy)
    loss = -float(agent.log_alpha) * slack
    if not with_grad:
        return loss
    return loss, np.array(-slack, dtype=agent.log_alpha.dtype)


def target_update(agent: AgentParams, tau: float) -> AgentParams:
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError("tau must lie in (0, 1]")
    if tau == 1.0:
        new = agent.critics.copy()
    else:
        new = agent.target_critics.with_leaves(
            [(1.0 - tau) * t + tau * o for t, o in zip(agent.target_critics.leaves(), agent.critics.leaves())]
        )
    return AgentParams(agent.policy, agent.critics, new, agent.log_alpha, agent.state_dim, agent.action_dim)


# ---------------------------------------------------------------- learner


@dataclass
class SacLearner:
    """Agent parameters plus optimiser state; ``update`` mutates in place."""

    agent: AgentParams
    cfg: SacConfig
    policy_opt: AdamState = field(default=None)
    critic_opt: AdamState = field(default=None)
    alpha_opt: AdamState = field(default=None)

    def __post_init__(self):
        self.policy_opt = self.policy_opt or adam_init(self.agent.policy)
        self.critic_opt = self.critic_opt or adam_init(self.agent.critics)
        self.alpha_opt = self.alpha_opt or adam_init(self.agent.log_alpha)

    @property
    def target_entropy(self) -> float:
        te = self.cfg.target_entropy
        return -float(self.agent.action_dim) if te is None else float(te)

    def update(self, states, actions, targets, rng: np.random.Generator) -> dict:
        """Critic step, actor step, temperature step, Polyak update."""
        a, cfg = self.agent, self.cfg
        q_loss, gq = critic_loss(a, states, actions, targets, with_grad=True)
        critics, self.critic_opt = adam_step(a.critics, gq, self.critic_opt, lr=cfg.critic_lr)
        a = AgentParams(a.policy, critics, a.target_critics, a.log_alpha, a.state_dim, a.action_dim)

        pi_loss, entropy, gp, log_prob = actor_loss(a, states, rng=rng, cfg=cfg, with_grad=True)
        policy, self.policy_opt = adam_step(a.policy, gp, self.policy_opt, lr=cfg.actor_lr)

        log_alpha = a.log_alpha
        if cfg.alpha_mode == "learned":
            _, ga = temperature_loss(a, self.target_entropy, log_probs=log_prob, with_grad=True)
            log_alpha, self.alpha_opt = adam_step(a.log_alpha, ga, self.alpha_opt, lr=cfg.alpha_lr)

        a = AgentParams(policy, critics, a.target_critics, log_alpha, a.state_dim, a.action_dim)
        self.agent = target_update(a, cfg.tau)
        return {"critic_loss": q_loss, "actor_loss": pi_loss, "entropy": entropy, "alpha": self.agent.alpha}


# ---------------------------------------------------------------- checkpoints


def config_fingerprint(agent: AgentParams, cfg: SacConfig) -> str:
    arch = {
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "hidden": list(cfg.hidden),
        "critic_mode": cfg.critic_mode,
        "policy_shapes": [list(s) for s in agent.policy.shapes],
        "critic_shapes": [list(s) for s in agent.critics.shapes],
    }
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()


def save_agent(path, agent: AgentParams, cfg: SacConfig):
    meta = {"fingerprint": config_fingerprint(agent, cfg), "config": asdict(cfg),
            "state_dim": agent.state_dim, "action_dim": agent.action_dim}
    tensors = {"policy": agent.policy, "critics": agent.critics,
               "target_critics": agent.target_critics, "log_alpha": agent.log_alpha}
    return save_checkpoint(path, tensors, meta, dtype=agent.policy.dtype)


def load_agent(path, cfg: SacConfig) -> AgentParams:
    """Load a checkpoint, refusing one written for a different architecture."""
    tensors, meta = load_checkpoint(path)
    agent = AgentParams(tensors["policy"], tensors["critics"], tensors["target_critics"],
                        np.asarray(tensors["log_alpha"]), meta["state_dim"], meta["action_dim"])
    if config_fingerprint(agent, cfg) != meta["fingerprint"]:
        raise ConfigurationError("checkpoint architecture does not match the configuration")
    return agent
