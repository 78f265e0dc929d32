"""Batched, deterministic swing-up environments and the oracle rollout.

Pendulum (``pendulum``), angle measured from upright, uniform rod::

    theta_dd = 3 g / (2 l) * sin(theta) + 3 / (m l^2) * u,   u = max_torque * a
    semi-implicit Euler:  theta_d <- clip(theta_d + h theta_dd, +-max_speed)
                          theta   <- theta + h theta_d

    observation [cos theta, sin theta, theta_d]
    cost  = wrap(theta)^2 + 0.1 theta_d^2 + 0.001 u^2       (in [0, cost_max])
    reward = reward_scale * max(0, 1 - cost / cost_ref)    (in [0, reward_scale])

With the defaults (``cost_ref = 4``, ``reward_scale = 1.25``) any state with
cost >= 4 (e.g. hanging, or more than two radians from upright) earns 0 and a
balanced pendulum earns 1.25 per step, so an episode return lies in [0, 250].
A swing-up policy near the optimum averages about 220; uniform random
actions average about 40.

Cartpole swing-up (``cartpole_swingup``), angle from upright, Barto et al.
equations with the pole's moment of inertia about its centre::

    temp     = (F + m_p l theta_d^2 sin) / M
    theta_dd = (g sin - cos temp) / (l (4/3 - m_p cos^2 / M))
    x_dd     = temp - m_p l theta_dd cos / M,        F = max_force * a, M = m_c + m_p

    observation [x, x_d, cos theta, sin theta, theta_d]
    reward = (1 + cos theta)/2 * (1 + exp(-x^2 / 2))/2 * (1 - u_norm^2 / 5)   (in [0, 1])

Episodes end on the time limit only; ``done`` then means truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InputError
from .expansion import RolloutBatch

PolicySampler = Callable[[np.ndarray, np.random.Generator], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    episode_length: int
    dt: float
    substeps: int
    params: dict = field(default_factory=dict)
    reward_id: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.episode_length < 1:
            raise ConfigurationError("episode_length must be >= 1")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be >= 1")
        torque = self.params.get("max_torque", self.params.get("max_force", 1.0))
        if torque <= 0:
            raise ConfigurationError("actuator limit must be positive")

    @property
    def reward_bounds(self) -> tuple[float, float]:
        if self.name == "pendulum":
            return 0.0, float(self.params["reward_scale"])
        return 0.0, 1.0


@dataclass
class EnvState:
    obs: np.ndarray  # [B, n]
    step: np.ndarray  # [B] int
    done: np.ndarray  # [B] bool

    @property
    def batch(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def from_obs(cls, obs) -> "EnvState":
        obs = np.asarray(obs, dtype=np.float64)
        b = obs.shape[0]
        return cls(obs, np.zeros(b, dtype=np.int64), np.zeros(b, dtype=bool))


PENDULUM_DEFAULTS = dict(
    mass=1.0,
    length=1.0,
    gravity=9.81,
    max_torque=2.0,
    max_speed=8.0,
    cost_ref=4.0,
    reward_scale=1.25,
)

CARTPOLE_DEFAULTS = dict(
    cart_mass=1.0,
    pole_mass=0.1,
    pole_half_length=0.5,
    gravity=9.81,
    max_force=10.0,
    max_speed=20.0,
    init_noise=0.05,
)

_BASE = {
    "pendulum": dict(state_dim=3, action_dim=1, episode_length=200, dt=0.05, substeps=1, reward_id="pendulum_clipped_cost"),
    "cartpole_swingup": dict(state_dim=5, action_dim=1, episode_length=500, dt=0.02, substeps=4, reward_id="cartpole_smooth_upright"),
}
_DEFAULT_PARAMS = {"pendulum": PENDULUM_DEFAULTS, "cartpole_swingup": CARTPOLE_DEFAULTS}

ENV_IDS = tuple(_BASE)


def make_env(env_id: str, overrides: dict | None = None) -> EnvSpec:
    """Build an :class:`EnvSpec`. ``overrides`` may set ``episode_length``,
    ``dt``, ``substeps`` or any physical constant."""
    if env_id not in _BASE:
        raise ConfigurationError(f"unknown environment {env_id!r}; choose from {ENV_IDS}")
    base = dict(_BASE[env_id])
    params = dict(_DEFAULT_PARAMS[env_id])
    for key, value in (overrides or {}).items():
        if key in ("episode_length", "substeps"):
            base[key] = int(value)
        elif key == "dt":
            base[key] = float(value)
        elif key in params:
            params[key] = float(value)
        else:
            raise ConfigurationError(f"unknown override {key!r} for {env_id}")
    return EnvSpec(name=env_id, params=params, **base)


def wrap_angle(theta):
    return (theta + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------- pendulum


def _pendulum_reset(spec, batch, rng):
    theta = rng.uniform(-np.pi, np.pi, batch)
    theta_d = rng.uniform(-1.0, 1.0, batch)
    return np.stack([np.cos(theta), np.sin(theta), theta_d], axis=-1)


def pendulum_cost(spec, theta, theta_d, torque):
    return wrap_angle(theta) ** 2 + 0.1 * theta_d**2 + 0.001 * torque**2


def _pendulum_step(spec, obs, actions):
    p = spec.params
    theta = np.arctan2(obs[:, 1], obs[:, 0])
    theta_d = obs[:, 2]
    torque = p["max_torque"] * actions[:, 0]
    cost = pendulum_cost(spec, theta, theta_d, torque)
    reward = p["reward_scale"] * np.maximum(0.0, 1.0 - cost / p["cost_ref"])
    h = spec.dt / spec.substeps
    grav = 3.0 * p["gravity"] / (2.0 * p["length"])
    drive = 3.0 / (p["mass"] * p["length"] ** 2)
    for _ in range(spec.substeps):
        theta_dd = grav * np.sin(theta) + drive * torque
        theta_d = np.clip(theta_d + h * theta_dd, -p["max_speed"], p["max_speed"])
        theta = theta + h * theta_d
    return np.stack([np.cos(theta), np.sin(theta), theta_d], axis=-1), reward


# ---------------------------------------------------------------- cartpole


def _cartpole_reset(spec, batch, rng):
    eps = spec.params["init_noise"]
    x = rng.uniform(-eps, eps, batch)
    x_d = rng.uniform(-eps, eps, batch)
    theta = np.pi + rng.uniform(-eps, eps, batch)
    theta_d = rng.uniform(-eps, eps, batch)
    return np.stack([x, x_d, np.cos(theta), np.sin(theta), theta_d], axis=-1)


def _cartpole_step(spec, obs, actions):
    p = spec.params
    x, x_d, theta_d = obs[:, 0], obs[:, 1], obs[:, 4]
    theta = np.arctan2(obs[:, 3], obs[:, 2])
    a = actions[:, 0]
    reward = (1.0 + np.cos(theta)) / 2.0 * (1.0 + np.exp(-0.5 * x * x)) / 2.0 * (1.0 - a * a / 5.0)
    force = p["max_force"] * a
    mp, l, g = p["pole_mass"], p["pole_half_length"], p["gravity"]
    total = p["cart_mass"] + mp
    h = spec.dt / spec.substeps
    for _ in range(spec.substeps):
        sin, cos = np.sin(theta), np.cos(theta)
        temp = (force + mp * l * theta_d * theta_d * sin) / total
        theta_dd = (g * sin - cos * temp) / (l * (4.0 / 3.0 - mp * cos * cos / total))
        x_dd = temp - mp * l * theta_dd * cos / total
        x_d = x_d + h * x_dd
        x = x + h * x_d
        theta_d = np.clip(theta_d + h * theta_dd, -p["max_speed"], p["max_speed"])
        theta = theta + h * theta_d
    return np.stack([x, x_d, np.cos(theta), np.sin(theta), theta_d], axis=-1), reward


_DYNAMICS = {
    "pendulum": (_pendulum_reset, _pendulum_step),
    "cartpole_swingup": (_cartpole_reset, _cartpole_step),
}


# ---------------------------------------------------------------- public API


def reset(spec: EnvSpec, batch: int, rng: np.random.Generator) -> EnvState:
    if batch < 1:
        raise ConfigurationError("batch must be >= 1")
    obs = _DYNAMICS[spec.name][0](spec, batch, rng)
    return EnvState(obs, np.zeros(batch, dtype=np.int64), np.zeros(batch, dtype=bool))


def physics_step(spec: EnvSpec, obs: np.ndarray, actions: np.ndarray):
    """Time-limit-free transition of raw observations. Returns ``(next_obs, reward)``."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape != (obs.shape[0], spec.action_dim):
        raise ConfigurationError(f"actions shape {actions.shape} != {(obs.shape[0], spec.action_dim)}")
    if not np.isfinite(actions).all():
        raise InputError("non-finite action")
    actions = np.clip(actions, -1.0, 1.0)
    return _DYNAMICS[spec.name][1](spec, np.asarray(obs, dtype=np.float64), actions)


def step(spec: EnvSpec, state: EnvState, actions: np.ndarray):
    """Advance every batch element one control step.

    Returns ``(next_state, rewards, dones)``; ``dones`` marks time-limit truncation.
    """
    obs, reward = physics_step(spec, state.obs, actions)
    t = state.step + 1
    done = t >= spec.episode_length
    return EnvState(obs, t, done), reward, done


def oracle_rollout(spec: EnvSpec, start, policy_sampler: PolicySampler, horizon: int, rng: np.random.Generator) -> RolloutBatch:
    """Roll the true dynamics ``horizon`` steps from ``start`` under the policy.

    ``start`` is an :class:`EnvState` or an observation array. The time limit is
    ignored inside a rollout; these tasks have no terminal states, so every
    continuation mask is one.
    """
    if horizon < 0:
        raise ConfigurationError("horizon must be >= 0")
    obs = start.obs if isinstance(start, EnvState) else np.asarray(start, dtype=np.float64)
    b = obs.shape[0]
    states = np.empty((b, horizon + 1, spec.state_dim))
    actions = np.empty((b, horizon + 1, spec.action_dim))
    log_probs = np.empty((b, horizon + 1))
    rewards = np.empty((b, horizon))
    masks = np.ones((b, horizon))
    for t in range(horizon + 1):
        states[:, t] = obs
        a, lp = policy_sampler(obs, rng)
        actions[:, t] = a
        log_probs[:, t] = lp
        if t < horizon:
            obs, rewards[:, t] = physics_step(spec, obs, a)
    return RolloutBatch(states, actions, rewards, log_probs, masks)


def with_params(spec: EnvSpec, **params) -> EnvSpec:
    merged = dict(spec.params)
    merged.update(params)
    return replace(spec, params=merged)
