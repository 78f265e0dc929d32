import numpy as np
import pytest

from mbve import dynamics as dyn
from mbve import envs
from mbve.errors import ConfigurationError
from mbve.numerics import softplus

A = np.array([[0.9, 0.1, 0.0], [0.0, 0.95, 0.05], [0.02, 0.0, 0.9]])
B = np.array([[0.1], [0.0], [0.2]])


def linear_data(n, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, (n, 3))
    a = rng.uniform(-1, 1, (n, 1))
    return dict(s=s, a=a, r=s.sum(1), s2=s @ A.T + a @ B.T)


def small_cfg(**kw):
    base = dict(ensemble_size=3, hidden=(32, 32), epochs=5, min_fit=10, batch_size=64)
    base.update(kw)
    return dyn.ModelConfig(**base)


def zero_model(cfg=None):
    cfg = cfg or small_cfg()
    m = dyn.init_model(3, 1, cfg, np.random.default_rng(0), dtype=np.float64)
    m.net = m.net.zeros_like()
    return m


def test_zero_network_predicts_zero_delta_and_clamped_logvar():
    m = zero_model()
    pred = dyn.model_forward(m, 0, np.ones((4, 3)), np.zeros((4, 1)))
    assert np.array_equal(pred.mean, np.zeros((4, 4)))
    upper = 0.5 - softplus(np.array(0.5))
    want = -10.0 + softplus(upper + 10.0)
    np.testing.assert_allclose(pred.log_var, want, rtol=0, atol=1e-15)


def test_unit_variance_nll_is_half_squared_error():
    mean, target = np.array([[0.0, 1.0]]), np.array([[2.0, -1.0]])
    assert dyn.gaussian_nll(mean, np.zeros((1, 2)), target)[0] == 0.5 * (4.0 + 4.0)


def test_nll_grows_with_variance_at_zero_residual():
    t = np.zeros((1, 3))
    vals = [dyn.gaussian_nll(t, np.full((1, 3), lv), t)[0] for lv in (-2.0, 0.0, 1.0)]
    assert vals[0] < vals[1] < vals[2]


def test_soft_clamp_stays_inside_bounds():
    raw = np.linspace(-50, 50, 101)
    lv = dyn.soft_clamp(raw, np.array(0.5), np.array(-10.0))
    # the lower softplus can lift the ceiling by at most softplus(min - max)
    assert lv.max() <= 0.5 + softplus(np.array(-10.5)) + 1e-12 and lv.min() >= -10.0
    assert np.all(np.diff(lv) >= 0)


def test_loss_gradients_match_finite_differences():
    cfg = small_cfg(ensemble_size=2, hidden=(6,))
    m = dyn.init_model(3, 1, cfg, np.random.default_rng(3), dtype=np.float64)
    m.max_logvar = m.max_logvar - 0.3  # keep the raw outputs in the curved part of the clamp
    data = linear_data(12, 1)
    x = np.concatenate([data["s"], data["a"]], -1)
    xs = np.broadcast_to(x, (2,) + x.shape)
    tgt = np.concatenate([data["s2"] - data["s"], data["r"][:, None]], -1)
    tgt = np.broadcast_to(tgt, (2,) + tgt.shape)

    def total(model):
        return dyn._loss_and_grads(model, xs[..., :3], xs[..., 3:], tgt, 0.01)[0].sum()

    _, _, g_net, g_max, g_min = dyn._loss_and_grads(m, xs[..., :3], xs[..., 3:], tgt, 0.01)
    eps = 1e-6
    for arr, g in [(m.max_logvar, g_max), (m.min_logvar, g_min)] + list(zip(m.net.leaves(), g_net.leaves())):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            hi = total(m)
            arr[i] = old - eps
            lo = total(m)
            arr[i] = old
            assert g[i] == pytest.approx((hi - lo) / (2 * eps), rel=1e-5, abs=1e-8)


def test_fits_linear_system():
    cfg = small_cfg(epochs=15)
    m = dyn.init_model(3, 1, cfg, np.random.default_rng(1), dtype=np.float64)
    m, rep = dyn.train_model(m, linear_data(2000), cfg.epochs, np.random.default_rng(2), cfg)
    assert rep.holdout_mse.max() < 1e-3
    assert rep.train_nll[-1] < rep.train_nll[0]


def test_training_is_deterministic_and_members_differ():
    cfg = small_cfg(epochs=2)
    data = linear_data(500)
    runs = []
    for _ in range(2):
        m = dyn.init_model(3, 1, cfg, np.random.default_rng(1), dtype=np.float64)
        runs.append(dyn.train_model(m, data, 2, np.random.default_rng(5), cfg)[0])
    assert all(np.array_equal(x, y) for x, y in zip(runs[0].net.leaves(), runs[1].net.leaves()))
    mean, _ = dyn.predict_all(runs[0], data["s"][:10], data["a"][:10])
    assert not np.allclose(mean[0], mean[1])


def test_fit_skipped_without_enough_data(caplog):
    cfg = small_cfg(min_fit=100)
    m = zero_model(cfg)
    out, rep = dyn.train_model(m, linear_data(50), 1, np.random.default_rng(0), cfg)
    assert rep is None and out is m


def test_member_sampling_is_uniform():
    m = zero_model(small_cfg(ensemble_size=5))
    draws = dyn.sample_member(m, np.random.default_rng(0), size=100_000)
    freq = np.bincount(draws, minlength=5) / draws.size
    assert np.all(np.abs(freq - 0.2) < 0.01)


def test_rollout_with_true_dynamics_matches_env():
    spec = envs.make_env("pendulum")
    m = dyn.init_model(3, 1, small_cfg(ensemble_size=2), np.random.default_rng(0), dtype=np.float64)

    def perfect(s, a):
        s2, r = envs.physics_step(spec, s, a)
        mean = np.concatenate([s2 - s, r[:, None]], -1)
        return np.stack([mean, mean]), np.full((2,) + mean.shape, -np.inf)

    policy = lambda s, rng: (rng.uniform(-1, 1, (s.shape[0], 1)), np.zeros(s.shape[0]))
    start = envs.reset(spec, 6, np.random.default_rng(1)).obs
    ro = dyn.model_rollout(m, start, policy, 4, np.random.default_rng(2), noise_rng=np.random.default_rng(3),
                           predictor=perfect)
    ref = envs.oracle_rollout(spec, start, policy, 4, np.random.default_rng(2))
    np.testing.assert_allclose(ro.states, ref.states, atol=1e-12)
    np.testing.assert_allclose(ro.rewards, ref.rewards, atol=1e-12)
    assert ro.masks.all() and ro.truncated == 0


def test_rollout_uses_every_member():
    m = zero_model(small_cfg(ensemble_size=2))

    def tagged(s, a):
        mean = np.zeros((2, s.shape[0], 4))
        mean[1, :, 3] = 1.0  # member 1 pays reward 1
        return mean, np.full_like(mean, -np.inf)

    policy = lambda s, rng: (np.zeros((s.shape[0], 1)), np.zeros(s.shape[0]))
    ro = dyn.model_rollout(m, np.zeros((400, 3)), policy, 3, np.random.default_rng(0), predictor=tagged)
    frac = ro.rewards.mean()
    assert 0.4 < frac < 0.6
    # per-trajectory keeps one member for the whole rollout
    ro = dyn.model_rollout(m, np.zeros((400, 3)), policy, 3, np.random.default_rng(0), predictor=tagged,
                           member_resample="per_trajectory")
    assert np.all((ro.rewards == 0).all(1) | (ro.rewards == 1).all(1))


def test_rollout_truncates_on_non_finite_prediction():
    m = zero_model(small_cfg(ensemble_size=1))

    def blowup(s, a):
        mean = np.zeros((1, s.shape[0], 4))
        mean[0, :, 0] = np.where(s[:, 1] > 0, np.inf, 0.1)
        return mean, np.full_like(mean, -np.inf)

    policy = lambda s, rng: (np.zeros((s.shape[0], 1)), np.zeros(s.shape[0]))
    start = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
    ro = dyn.model_rollout(m, start, policy, 3, np.random.default_rng(0), predictor=blowup)
    assert ro.truncated == 1
    assert ro.masks[0].sum() == 0 and ro.masks[1].all()
    assert np.isfinite(ro.states).all()


def test_normalizer_roundtrip():
    m = zero_model()
    x = np.random.default_rng(0).normal(3.0, 5.0, (100, 4))
    m = dyn.fit_normalizer(m, x)
    np.testing.assert_allclose(dyn.denormalize(m, dyn.normalize(m, x)), x, rtol=0, atol=1e-12)
    z = dyn.normalize(m, x)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)


def test_checkpoint_and_nll_csv(tmp_path):
    m = dyn.init_model(3, 1, small_cfg(), np.random.default_rng(4), dtype=np.float64)
    back = dyn.load_model(dyn.save_model(tmp_path / "m.npz", m))
    s, a = np.ones((2, 3)), np.ones((2, 1))
    assert np.array_equal(dyn.predict_all(m, s, a)[0], dyn.predict_all(back, s, a)[0])
    path = dyn.write_nll_csv(tmp_path / "nll.csv", [(250, [1.0, 2.0, 3.0]), (500, [0.5, 0.5, 0.5])])
    lines = path.read_text().splitlines()
    assert lines[0] == "env_step,member_0,member_1,member_2,mean"
    assert lines[1].startswith("250,1.0,2.0,3.0,2.0")


def test_config_validation():
    for bad in (dict(ensemble_size=0), dict(member_resample="sometimes"), dict(init_min_logvar=1.0)):
        with pytest.raises(ConfigurationError):
            dyn.ModelConfig(**bad)
