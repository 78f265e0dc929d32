"""The training loop shared by ``sac``, ``mve`` and ``ove``.

Every run draws from independent generators spawned from the seed, one per
purpose, so changing the horizon only changes the streams that the rollouts
themselves consume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, envs
from .buffer import ReplayBuffer, Transition
from .config import TrainConfig
from .errors import NumericalError
from .expansion import ExpansionConfig, critic_target
from .sac import SacLearner, deterministic_action, init_agent, make_q_fn, make_sampler

log = logging.getLogger(__name__)

STREAMS = ("init", "env", "explore", "buffer", "update", "target", "model_noise", "model_fit", "eval")


@dataclass
class RunMetrics:
    seed: int
    steps: list = field(default_factory=list)
    means: list = field(default_factory=list)
    stds: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)  # one dict per eval
    model_nll: list = field(default_factory=list)  # (env_step, per-member holdout NLL)
    model_mse: list = field(default_factory=list)  # (env_step, per-member holdout delta MSE)

    def curve(self):
        return list(zip(self.steps, self.means))


def seed_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


def evaluate(spec: envs.EnvSpec, agent, episodes: int, rng: np.random.Generator):
    """Run ``episodes`` full episodes in one batch with the mean action."""
    state = envs.reset(spec, episodes, rng)
    total = np.zeros(episodes)
    for _ in range(spec.episode_length):
        state, r, _ = envs.step(spec, state, deterministic_action(agent, state.obs))
        total += r
    return float(total.mean()), float(total.std())


class _Averager:
    def __init__(self):
        self.sums, self.count = {}, 0

    def add(self, info):
        for k, v in info.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v)
        self.count += 1

    def flush(self):
        out = {k: v / self.count for k, v in self.sums.items()} if self.count else {}
        self.sums, self.count = {}, 0
        return out


def train_run(cfg: TrainConfig, seed: int) -> RunMetrics:
    """One seed of ``cfg``. Reproducible bit-for-bit from ``(cfg, seed)``."""
    rngs = seed_streams(seed)
    dtype = np.dtype(cfg.dtype)
    spec = envs.make_env(cfg.env, cfg.env_overrides)
    n, m = spec.state_dim, spec.action_dim
    learner = SacLearner(init_agent(n, m, cfg.sac, rngs["init"], dtype=dtype), cfg.sac)
    buffer = ReplayBuffer(cfg.buffer_capacity, n, m, dtype=dtype)
    exp_cfg = ExpansionConfig(cfg.horizon, cfg.sac.gamma, cfg.bootstrap, cfg.max_horizon)
    model = dynamics.init_model(n, m, cfg.model, rngs["init"], dtype=dtype) if cfg.uses_model else None
    metrics = RunMetrics(seed)
    avg = _Averager()

    def rollout_source(start, sampler, horizon, rng):
        if cfg.algo == "ove":
            return envs.oracle_rollout(spec, start, sampler, horizon, rng)
        return dynamics.model_rollout(model, start, sampler, horizon, rng, noise_rng=rngs["model_noise"],
                                      member_resample=cfg.model.member_resample)

    state = envs.reset(spec, 1, rngs["env"])
    try:
        for t in range(1, cfg.total_steps + 1):
            if t <= cfg.warmup_steps:
                action = rngs["explore"].uniform(-1.0, 1.0, (1, m))
            else:
                action, _ = make_sampler(learner.agent, cfg.sac)(state.obs, rngs["explore"])
            nxt, reward, done = envs.step(spec, state, action)
            buffer.add(Transition(state.obs[0], action[0], float(reward[0]), nxt.obs[0], bool(done[0]), bool(done[0])))
            state = envs.reset(spec, 1, rngs["env"]) if done[0] else nxt

            if model is not None and t >= cfg.warmup_steps and (t - cfg.warmup_steps) % cfg.model.refit_every == 0:
                model, report = dynamics.train_model(model, buffer.contents(), cfg.model.epochs, rngs["model_fit"], cfg.model)
                if report is not None:
                    metrics.model_nll.append((t, report.holdout_nll.tolist()))
                    metrics.model_mse.append((t, report.holdout_mse.tolist()))

            if t >= cfg.warmup_steps:
                for _ in range(cfg.utd_ratio):
                    avg.add(_update(learner, buffer, cfg, exp_cfg, rngs, rollout_source))

            if t % cfg.eval_interval == 0:
                mean, std = evaluate(spec, learner.agent, cfg.eval_episodes, rngs["eval"])
                metrics.steps.append(t)
                metrics.means.append(mean)
                metrics.stds.append(std)
                metrics.diagnostics.append(avg.flush())
                log.info("%s seed=%d step=%d reward=%.2f", cfg.label, seed, t, mean)
                if cfg.stop_reward is not None and mean >= cfg.stop_reward:
                    break
    except NumericalError:
        _dump(cfg, seed, metrics, t)
        raise
    return metrics


def _update(learner: SacLearner, buffer, cfg, exp_cfg, rngs, rollout_source) -> dict:
    batch = buffer.sample(cfg.sac.batch_size, rngs["buffer"])
    agent = learner.agent
    targets = critic_target(
        batch.r, batch.s2, batch.terminal, make_q_fn(agent, cfg.bootstrap), make_sampler(agent, cfg.sac),
        agent.alpha, exp_cfg, rngs["target"], rollout_source=rollout_source,
    )
    return learner.update(batch.s, batch.a, targets, rngs["update"])


def _dump(cfg: TrainConfig, seed: int, metrics: RunMetrics, step: int):
    out = cfg.resolved_out_dir()
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"failure_seed{seed}.json"
    with open(path, "w") as fh:
        json.dump({"step": step, "seed": seed, "config": cfg.to_dict(), "evals": metrics.curve(),
                   "diagnostics": metrics.diagnostics}, fh, indent=2)
    log.error("non-finite loss at step %d; diagnostics written to %s", step, path)


def train(cfg: TrainConfig) -> list:
    """Run every seed of ``cfg`` in turn."""
    return [train_run(cfg, seed) for seed in cfg.seeds]
