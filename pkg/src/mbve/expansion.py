"""Maximum-entropy value-expansion critic targets.

For a rollout ``s_0, a_0, r_0, ..., s_H, a_H`` (actions drawn from the
policy, ``lp_t = log pi(a_t | s_t)``)::

    V_H(s_0) = sum_{t<H} gamma^t (r_t - alpha lp_t) + gamma^H (Q(s_H, a_H) - alpha lp_H)
    target   = r + gamma (1 - terminal) V_H(s')

``H = 0`` leaves only the bootstrap term, which is the ordinary SAC soft value.

Masks: ``masks[:, t] == 1`` means step ``t`` of the rollout is usable. They are
non-increasing, so an element with ``k`` live steps keeps its first ``k``
soft rewards and bootstraps from ``(s_k, a_k)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError

QFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
BOOTSTRAP_MODES = ("twin_min_target", "single")


@dataclass
class RolloutBatch:
    states: np.ndarray  # [B, H+1, n]
    actions: np.ndarray  # [B, H+1, m]
    rewards: np.ndarray  # [B, H]
    log_probs: np.ndarray  # [B, H+1]
    masks: np.ndarray  # [B, H]
    truncated: int = 0  # elements cut short by non-finite model predictions

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def batch(self) -> int:
        return self.states.shape[0]

    def validate(self):
        b, h = self.rewards.shape
        if self.states.shape[:2] != (b, h + 1) or self.actions.shape[:2] != (b, h + 1):
            raise ConfigurationError("states/actions must have H+1 entries per element")
        if self.log_probs.shape != (b, h + 1) or self.masks.shape != (b, h):
            raise ConfigurationError("log_probs must be [B, H+1] and masks [B, H]")
        if h > 1 and np.any(np.diff(self.masks, axis=1) > 0):
            raise ConfigurationError("masks must be non-increasing along the horizon")
        return self


@dataclass
class ExpansionConfig:
    horizon: int = 0
    gamma: float = 0.99
    bootstrap: str = "twin_min_target"
    max_horizon: int = 30

    def __post_init__(self):
        if not 0 <= self.horizon <= self.max_horizon:
            raise ConfigurationError(f"horizon {self.horizon} outside [0, {self.max_horizon}]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if self.bootstrap not in BOOTSTRAP_MODES:
            raise ConfigurationError(f"bootstrap must be one of {BOOTSTRAP_MODES}")


def _live_steps(rollout: RolloutBatch, horizon: int) -> np.ndarray:
    return rollout.masks[:, :horizon].sum(axis=1).astype(np.int64)


def expand_value(rollout: RolloutBatch, q_fn: QFn, alpha: float, gamma: float, horizon: int) -> np.ndarray:
    """Soft H-step value estimate per batch element (shape ``[B]``).

    Evaluated backwards from the bootstrap, ``G <- (r_t - alpha lp_t) + gamma G``,
    skipping steps whose mask is zero.
    """
    if horizon > rollout.horizon:
        raise ConfigurationError(f"horizon {horizon} exceeds rollout length {rollout.horizon}")
    if horizon < 0:
        raise ConfigurationError("horizon must be >= 0")
    rows = np.arange(rollout.batch)
    k = _live_steps(rollout, horizon)
    q = q_fn(rollout.states[rows, k], rollout.actions[rows, k])
    value = q - alpha * rollout.log_probs[rows, k]
    for t in reversed(range(horizon)):
        soft = rollout.rewards[:, t] - alpha * rollout.log_probs[:, t]
        value = np.where(rollout.masks[:, t] > 0, soft + gamma * value, value)
    return value


def zero_horizon_rollout(start: np.ndarray, policy_sampler, rng) -> RolloutBatch:
    """The degenerate rollout holding only ``(s_0, a_0, lp_0)``."""
    a, lp = policy_sampler(start, rng)
    b = start.shape[0]
    return RolloutBatch(
        start[:, None], np.asarray(a)[:, None], np.zeros((b, 0)), np.asarray(lp)[:, None], np.ones((b, 0))
    )


def critic_target(
    rewards: np.ndarray,
    next_states: np.ndarray,
    terminals: np.ndarray,
    q_fn: QFn,
    policy_sampler,
    alpha: float,
    cfg: ExpansionConfig,
    rng: np.random.Generator,
    rollout_source=None,
) -> np.ndarray:
    """``r + gamma (1 - terminal) V_H(s')`` with rollouts starting at ``s'``.

    ``terminals`` flags true terminal transitions only; time-limit truncation
    keeps bootstrapping. ``rollout_source(start, sampler, H, rng)`` must
    return a :class:`RolloutBatch`; it is not consulted when ``H == 0``.
    """
    if cfg.horizon == 0:
        rollout = zero_horizon_rollout(next_states, policy_sampler, rng)
    else:
        if rollout_source is None:
            raise ConfigurationError("a rollout source is required for horizon > 0")
        rollout = rollout_source(next_states, policy_sampler, cfg.horizon, rng)
        if rollout.horizon < cfg.horizon:
            raise ConfigurationError("rollout source returned a short rollout")
    value = expand_value(rollout, q_fn, alpha, cfg.gamma, cfg.horizon)
    cont = 1.0 - np.asarray(terminals, dtype=value.dtype)
    return rewards + cfg.gamma * cont * value


def target_decomposition(rollout: RolloutBatch, q_fn: QFn, alpha: float, gamma: float, horizon: int) -> np.ndarray:
    """Per-term contributions ``[B, H+1]``: discounted soft rewards then the
    discounted soft bootstrap. Rows sum to :func:`expand_value` up to rounding."""
    b = rollout.batch
    out = np.zeros((b, horizon + 1))
    rows = np.arange(b)
    if horizon:
        soft = rollout.rewards[:, :horizon] - alpha * rollout.log_probs[:, :horizon]
        out[:, :horizon] = rollout.masks[:, :horizon] * gamma ** np.arange(horizon) * soft
    k = _live_steps(rollout, horizon)
    q = q_fn(rollout.states[rows, k], rollout.actions[rows, k])
    out[:, horizon] = gamma**k * (q - alpha * rollout.log_probs[rows, k])
    return out


def write_decomposition_csv(path, terms: np.ndarray) -> Path:
    """Columns ``index,term_0,...,term_<H-1>,bootstrap,value``."""
    path = Path(path)
    h = terms.shape[1] - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"term_{t}" for t in range(h)] + ["bootstrap", "value"])
        for i, row in enumerate(terms):
            w.writerow([i] + [repr(float(x)) for x in row] + [repr(float(row.sum()))])
    return path
