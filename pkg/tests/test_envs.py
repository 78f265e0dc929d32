import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbve import envs
from mbve.errors import ConfigurationError, InputError

PEND = envs.make_env("pendulum")
CART = envs.make_env("cartpole_swingup")


def pend_obs(theta, theta_d):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return np.stack([np.cos(theta), np.sin(theta), np.broadcast_to(theta_d, theta.shape)], axis=-1)


def test_reset_is_deterministic_per_seed():
    a = envs.reset(PEND, 16, np.random.default_rng(3))
    b = envs.reset(PEND, 16, np.random.default_rng(3))
    assert np.array_equal(a.obs, b.obs)
    assert not a.done.any() and (a.step == 0).all()


def test_pendulum_reset_distribution():
    s = envs.reset(PEND, 10_000, np.random.default_rng(0))
    theta = np.arctan2(s.obs[:, 1], s.obs[:, 0])
    assert abs(theta.mean()) < 0.1
    assert theta.min() < -3.0 and theta.max() > 3.0
    assert np.all(np.abs(s.obs[:, 2]) <= 1.0)
    np.testing.assert_allclose(s.obs[:, 0] ** 2 + s.obs[:, 1] ** 2, 1.0, atol=1e-12)


def test_cartpole_reset_hangs_down():
    s = envs.reset(CART, 100, np.random.default_rng(0))
    theta = np.arctan2(s.obs[:, 3], s.obs[:, 2])
    assert np.all(np.abs(np.abs(theta) - math.pi) < 0.06)
    assert np.all(np.abs(s.obs[:, [0, 1, 4]]) <= 0.05)


def test_hanging_pendulum_is_a_fixed_point():
    s = envs.EnvState.from_obs(pend_obs(math.pi, 0.0))
    nxt, r, done = envs.step(PEND, s, np.zeros((1, 1)))
    np.testing.assert_allclose(nxt.obs, s.obs, atol=1e-9)
    assert r[0] == 0.0 and not done[0]


def test_upright_reward_is_maximal():
    s = envs.EnvState.from_obs(pend_obs(0.0, 0.0))
    _, r, _ = envs.step(PEND, s, np.zeros((1, 1)))
    assert r[0] == PEND.reward_bounds[1] == 1.25


def test_one_euler_step_by_hand():
    # theta_dd = 3 g / (2 l) sin(pi/2) = 14.715;  theta_d' = 0.05 * 14.715 = 0.73575
    # theta' = pi/2 + 0.05 * 0.73575
    s = envs.EnvState.from_obs(pend_obs(math.pi / 2, 0.0))
    nxt, _, _ = envs.step(PEND, s, np.zeros((1, 1)))
    assert nxt.obs[0, 2] == pytest.approx(0.73575, abs=1e-12)
    theta = math.pi / 2 + 0.05 * 0.73575
    np.testing.assert_allclose(nxt.obs[0, :2], [math.cos(theta), math.sin(theta)], atol=1e-12)


def test_torque_scaling_and_speed_clip():
    s = envs.EnvState.from_obs(pend_obs(math.pi, 0.0))
    nxt, r, _ = envs.step(PEND, s, np.ones((1, 1)))
    # at the bottom gravity is ~0, torque 2 -> theta_dd = 3 * 2 = 6
    assert nxt.obs[0, 2] == pytest.approx(0.3, abs=1e-9)
    fast = envs.EnvState.from_obs(pend_obs(0.5, 7.9))
    assert envs.step(PEND, fast, np.ones((1, 1)))[0].obs[0, 2] == 8.0


def test_time_limit_sets_done():
    s = envs.reset(PEND, 2, np.random.default_rng(0))
    for t in range(PEND.episode_length):
        s, _, done = envs.step(PEND, s, np.zeros((2, 1)))
        assert done.all() == (t == PEND.episode_length - 1)


def test_non_finite_action_rejected():
    s = envs.reset(PEND, 1, np.random.default_rng(0))
    with pytest.raises(InputError):
        envs.step(PEND, s, np.array([[np.nan]]))
    with pytest.raises(ConfigurationError):
        envs.step(PEND, s, np.zeros((2, 1)))


def test_make_env_overrides_and_errors():
    spec = envs.make_env("pendulum", {"max_torque": 3.0, "episode_length": 50})
    assert spec.params["max_torque"] == 3.0 and spec.episode_length == 50
    with pytest.raises(ConfigurationError):
        envs.make_env("hopper")
    with pytest.raises(ConfigurationError):
        envs.make_env("pendulum", {"bogus": 1})
    with pytest.raises(ConfigurationError):
        envs.make_env("pendulum", {"dt": 0.0})
    with pytest.raises(ConfigurationError):
        envs.make_env("pendulum", {"max_torque": -1.0})


def test_cartpole_fixed_point_and_upright_reward():
    down = np.array([[0.0, 0.0, -1.0, 0.0, 0.0]])
    nxt, r, _ = envs.step(CART, envs.EnvState.from_obs(down), np.zeros((1, 1)))
    np.testing.assert_allclose(nxt.obs, down, atol=1e-9)
    assert r[0] == 0.0
    up = np.array([[0.0, 0.0, 1.0, 0.0, 0.0]])
    assert envs.step(CART, envs.EnvState.from_obs(up), np.zeros((1, 1)))[1][0] == 1.0


def test_cartpole_force_pushes_cart():
    down = np.array([[0.0, 0.0, -1.0, 0.0, 0.0]])
    nxt, _, _ = envs.step(CART, envs.EnvState.from_obs(down), np.ones((1, 1)))
    assert nxt.obs[0, 1] > 0 and nxt.obs[0, 0] > 0


@pytest.mark.parametrize("spec", [PEND, CART], ids=lambda s: s.name)
def test_batch_independence_bitwise(spec):
    rng = np.random.default_rng(7)
    s = envs.reset(spec, 33, rng)
    a = rng.uniform(-1, 1, (33, 1))
    for _ in range(5):
        nxt, r, _ = envs.step(spec, s, a)
        for i in range(33):
            one = envs.EnvState(s.obs[i:i + 1], s.step[i:i + 1], s.done[i:i + 1])
            n1, r1, _ = envs.step(spec, one, a[i:i + 1])
            assert n1.obs.tobytes() == nxt.obs[i:i + 1].tobytes()
            assert r1.tobytes() == r[i:i + 1].tobytes()
        s = nxt


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), name=st.sampled_from(["pendulum", "cartpole_swingup"]))
def test_trig_consistency_and_reward_bounds(seed, name):
    spec = envs.make_env(name)
    rng = np.random.default_rng(seed)
    s = envs.reset(spec, 8, rng)
    lo, hi = spec.reward_bounds
    c, sn = (0, 1) if name == "pendulum" else (2, 3)
    for _ in range(30):
        s, r, _ = envs.step(spec, s, rng.uniform(-1, 1, (8, 1)))
        norm = s.obs[:, c] ** 2 + s.obs[:, sn] ** 2
        assert np.all(np.abs(norm - 1.0) <= 1e-9)
        assert np.all((r >= lo) & (r <= hi))
        speed = s.obs[:, 2] if name == "pendulum" else s.obs[:, 4]
        assert np.all(np.abs(speed) <= spec.params["max_speed"])


# ---------------------------------------------------------------- oracle rollouts


def linear_sampler(states, rng):
    noise = rng.standard_normal((states.shape[0], 1))
    a = np.tanh(0.3 * states[:, :1] - 0.2 * states[:, -1:] + 0.5 * noise)
    return a, -0.5 * noise[:, 0] ** 2


def test_oracle_rollout_base_case():
    s0 = envs.reset(PEND, 4, np.random.default_rng(1))
    ro = envs.oracle_rollout(PEND, s0, linear_sampler, 1, np.random.default_rng(9))
    rng = np.random.default_rng(9)
    a0, lp0 = linear_sampler(s0.obs, rng)
    s1, r0, _ = envs.step(PEND, s0, a0)
    a1, lp1 = linear_sampler(s1.obs, rng)
    assert np.array_equal(ro.actions[:, 0], a0) and np.array_equal(ro.actions[:, 1], a1)
    assert np.array_equal(ro.states[:, 1], s1.obs)
    assert np.array_equal(ro.rewards[:, 0], r0)
    assert np.array_equal(ro.log_probs, np.stack([lp0, lp1], axis=1))
    assert np.all(ro.masks == 1)


def test_oracle_rollout_deterministic():
    s0 = envs.reset(CART, 3, np.random.default_rng(2))
    a = envs.oracle_rollout(CART, s0, linear_sampler, 4, np.random.default_rng(5))
    b = envs.oracle_rollout(CART, s0, linear_sampler, 4, np.random.default_rng(5))
    for x, y in zip((a.states, a.actions, a.rewards, a.log_probs), (b.states, b.actions, b.rewards, b.log_probs)):
        assert np.array_equal(x, y)


def test_oracle_rollout_matches_unrolled_loop():
    s0 = envs.reset(PEND, 5, np.random.default_rng(4)).obs
    ro = envs.oracle_rollout(PEND, s0, linear_sampler, 5, np.random.default_rng(0))
    obs = s0.copy()
    for t in range(5):
        for i in range(5):
            one = envs.EnvState.from_obs(obs[i:i + 1])
            nxt, r, _ = envs.step(PEND, one, ro.actions[i:i + 1, t])
            assert r[0] == ro.rewards[i, t]
            obs[i] = nxt.obs[0]
        np.testing.assert_array_equal(obs, ro.states[:, t + 1])
    assert ro.validate() is ro
    assert np.all(np.diff(ro.masks, axis=1) <= 0)
