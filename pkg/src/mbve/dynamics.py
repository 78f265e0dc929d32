"""Probabilistic ensemble dynamics model.

Each member maps normalised ``[s, a]`` to the mean and log-variance of
``[s' - s, r]``. Log-variances are soft-clamped between per-member learned
bounds::

    lv = max_lv - softplus(max_lv - raw)
    lv = min_lv + softplus(lv - min_lv)

and members are trained on bootstrap resamples with the Gaussian negative
log-likelihood (constant ``0.5 log 2 pi`` omitted) plus
``bound_reg * (sum(max_lv) - sum(min_lv))``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .expansion import RolloutBatch
from .numerics import (
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    softplus,
)

log = logging.getLogger(__name__)

MEMBER_RESAMPLE = ("per_step", "per_trajectory")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ModelConfig:
    ensemble_size: int = 5
    hidden: tuple = (128, 128)
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 5
    refit_every: int = 250
    holdout_fraction: float = 0.1
    max_holdout: int = 2000
    min_fit: int = 256
    bound_reg: float = 0.01
    init_max_logvar: float = 0.5
    init_min_logvar: float = -10.0
    member_resample: str = "per_step"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be >= 1")
        if self.member_resample not in MEMBER_RESAMPLE:
            raise ConfigurationError(f"member_resample must be one of {MEMBER_RESAMPLE}")
        if self.init_min_logvar > self.init_max_logvar:
            raise ConfigurationError("init_min_logvar must not exceed init_max_logvar")


@dataclass
class EnsembleModel:
    net: MlpParams  # stacked, leading axis = member
    max_logvar: np.ndarray  # [N, n+1]
    min_logvar: np.ndarray  # [N, n+1]
    input_mean: np.ndarray  # [n+m]
    input_std: np.ndarray  # [n+m]
    state_dim: int
    action_dim: int

    @property
    def size(self) -> int:
        return self.net.ensemble_shape[0]

    @property
    def out_dim(self) -> int:
        return self.state_dim + 1

    def copy(self) -> "EnsembleModel":
        return EnsembleModel(self.net.copy(), self.max_logvar.copy(), self.min_logvar.copy(),
                             self.input_mean.copy(), self.input_std.copy(), self.state_dim, self.action_dim)


@dataclass
class ModelPrediction:
    mean: np.ndarray  # [B, n+1]: state delta then reward
    log_var: np.ndarray  # [B, n+1]


@dataclass
class FitReport:
    holdout_nll: np.ndarray  # [N]
    holdout_mse: np.ndarray  # [N], state-delta dimensions only
    train_nll: list  # mean member NLL per epoch


def init_model(state_dim: int, action_dim: int, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> EnsembleModel:
    d_out = state_dim + 1
    net = init_mlp((state_dim + action_dim, *cfg.hidden, 2 * d_out), rng, ensemble=cfg.ensemble_size, dtype=dtype)
    n = cfg.ensemble_size
    return EnsembleModel(
        net,
        np.full((n, d_out), cfg.init_max_logvar, dtype=dtype),
        np.full((n, d_out), cfg.init_min_logvar, dtype=dtype),
        np.zeros(state_dim + action_dim, dtype=dtype),
        np.ones(state_dim + action_dim, dtype=dtype),
        state_dim,
        action_dim,
    )


def normalize(model: EnsembleModel, x):
    return (x - model.input_mean) / model.input_std


def denormalize(model: EnsembleModel, z):
    return z * model.input_std + model.input_mean


def fit_normalizer(model: EnsembleModel, inputs: np.ndarray) -> EnsembleModel:
    out = model.copy()
    std = inputs.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    out.input_mean = inputs.mean(axis=0).astype(model.net.dtype)
    out.input_std = std.astype(model.net.dtype)
    return out


def soft_clamp(raw, max_lv, min_lv):
    upper = max_lv - softplus(max_lv - raw)
    return min_lv + softplus(upper - min_lv)


def _heads(model: EnsembleModel, s, a, cache=False):
    dtype = model.net.dtype
    x = np.concatenate([np.asarray(s, dtype=dtype), np.asarray(a, dtype=dtype)], axis=-1)
    z = normalize(model, x)
    if z.ndim == 2:
        z = np.broadcast_to(z, (model.size,) + z.shape)
    out, c = mlp_forward(model.net, z, return_cache=True)
    d = model.out_dim
    mean, raw = out[..., :d], out[..., d:]
    lv = soft_clamp(raw, model.max_logvar[:, None], model.min_logvar[:, None])
    return (mean, lv, raw, c) if cache else (mean, lv)


def predict_all(model: EnsembleModel, s, a):
    """Every member's ``(mean, log_var)``, each ``[N, B, n+1]``."""
    return _heads(model, s, a)


def model_forward(model: EnsembleModel, member: int, s, a) -> ModelPrediction:
    if not 0 <= member < model.size:
        raise ConfigurationError(f"member {member} out of range for ensemble of {model.size}")
    dtype = model.net.dtype
    x = np.concatenate([np.asarray(s, dtype=dtype), np.asarray(a, dtype=dtype)], axis=-1)
    out = mlp_forward(model.net.member(member), normalize(model, x))
    d = model.out_dim
    lv = soft_clamp(out[:, d:], model.max_logvar[member], model.min_logvar[member])
    return ModelPrediction(out[:, :d], lv)


def _targets(s, r, s2):
    return np.concatenate([s2 - s, np.asarray(r).reshape(-1, 1)], axis=-1)


def gaussian_nll(mean, log_var, target):
    """Per-row ``sum_d (t - mu)^2 / (2 var) + 0.5 log var``."""
    resid = target - mean
    return np.sum(0.5 * resid * resid * np.exp(-log_var) + 0.5 * log_var, axis=-1)


def nll_loss(model: EnsembleModel, member: int, s, a, r, s2, regularize: bool = True, bound_reg: float = 0.01) -> float:
    """Mean Gaussian NLL of one member on a batch of transitions."""
    pred = model_forward(model, member, s, a)
    loss = float(np.mean(gaussian_nll(pred.mean, pred.log_var, _targets(s, r, s2))))
    if regularize:
        loss += bound_reg * float(model.max_logvar[member].sum() - model.min_logvar[member].sum())
    return loss


def _loss_and_grads(model: EnsembleModel, x_s, x_a, target, bound_reg):
    """Summed-over-members NLL on ``[N, B, ...]`` minibatches and its gradients."""
    mean, lv, raw, cache = _heads(model, x_s, x_a, cache=True)
    b = target.shape[-2]
    inv_var = np.exp(-lv)
    resid = mean - target
    per_member = np.mean(np.sum(0.5 * resid * resid * inv_var + 0.5 * lv, axis=-1), axis=-1)
    reg = bound_reg * (model.max_logvar.sum(-1) - model.min_logvar.sum(-1))
    d_mean = resid * inv_var / b
    d_lv = (0.5 - 0.5 * resid * resid * inv_var) / b

    max_lv, min_lv = model.max_logvar[:, None], model.min_logvar[:, None]
    upper = max_lv - softplus(max_lv - raw)
    s_low = _sigmoid(upper - min_lv)
    s_up = _sigmoid(max_lv - raw)
    d_upper = d_lv * s_low
    d_min = (d_lv * (1.0 - s_low)).sum(-2) - bound_reg
    d_raw = d_upper * s_up
    d_max = (d_upper * (1.0 - s_up)).sum(-2) + bound_reg

    grads, _ = mlp_backward(model.net, cache, np.concatenate([d_mean, d_raw], axis=-1))
    return per_member + reg, per_member, grads, d_max, d_min


def train_model(model: EnsembleModel, data: dict, epochs: int, rng: np.random.Generator, cfg: ModelConfig | None = None):
    """Refit every member on its own bootstrap of ``data``.

    ``data`` holds arrays ``s, a, r, s2``. Normalisation statistics are
    refreshed first and a random holdout split is scored after training.
    Returns ``(new_model, FitReport | None)``; ``None`` when there is too
    little data to fit.
    """
    cfg = cfg or ModelConfig(ensemble_size=model.size)
    s, a, r, s2 = (np.asarray(data[k]) for k in ("s", "a", "r", "s2"))
    n = s.shape[0]
    if n < cfg.min_fit:
        log.info("skipping model fit: %d transitions < min_fit=%d", n, cfg.min_fit)
        return model, None
    dtype = model.net.dtype
    inputs = np.concatenate([s, a], axis=-1).astype(dtype)
    targets = _targets(s, r, s2).astype(dtype)

    perm = rng.permutation(n)
    n_hold = min(cfg.max_holdout, int(cfg.holdout_fraction * n))
    hold, train = perm[:n_hold], perm[n_hold:]
    model = fit_normalizer(model, inputs[train])
    m_tr = train.size
    boot = train[rng.integers(0, m_tr, size=(model.size, m_tr))]

    params = [model.net, model.max_logvar, model.min_logvar]
    opt = [adam_init(p) for p in params]
    bs = min(cfg.batch_size, m_tr)
    sd = model.state_dim
    history = []
    for _ in range(epochs):
        order = np.stack([row[rng.permutation(m_tr)] for row in boot])
        losses = []
        for start in range(0, m_tr - bs + 1, bs):
            idx = order[:, start:start + bs]
            x = inputs[idx]
            _, per_member, g_net, g_max, g_min = _loss_and_grads(model, x[..., :sd], x[..., sd:], targets[idx], cfg.bound_reg)
            losses.append(per_member.mean())
            new = []
            for k, (p, g) in enumerate(zip(params, (g_net, g_max.astype(dtype), g_min.astype(dtype)))):
                p, opt[k] = adam_step(p, g, opt[k], lr=cfg.lr)
                new.append(p)
            params = new
            model = EnsembleModel(params[0], params[1], params[2], model.input_mean, model.input_std, sd, model.action_dim)
        history.append(float(np.mean(losses)))

    report = evaluate_model(model, {k: np.asarray(v)[hold] for k, v in data.items() if k in ("s", "a", "r", "s2")}) if n_hold else None
    if report is not None:
        report.train_nll = history
    return model, report


def evaluate_model(model: EnsembleModel, data: dict) -> FitReport:
    """Per-member NLL (no bound regulariser) and state-delta MSE on ``data``."""
    s, a, r, s2 = (np.asarray(data[k]) for k in ("s", "a", "r", "s2"))
    target = _targets(s, r, s2)
    mean, lv = predict_all(model, s, a)
    nll = np.mean(gaussian_nll(mean, lv, target), axis=-1)
    sd = model.state_dim
    mse = np.mean((mean[..., :sd] - target[:, :sd]) ** 2, axis=(-1, -2))
    return FitReport(nll.astype(np.float64), mse.astype(np.float64), [])


def sample_member(model: EnsembleModel, rng: np.random.Generator, size=None):
    """Uniformly drawn member index (or array of indices)."""
    if size is None:
        return int(rng.integers(model.size))
    return rng.integers(model.size, size=size)


def model_rollout(model: EnsembleModel, start, policy_sampler, horizon: int, rng: np.random.Generator,
                  noise_rng: np.random.Generator | None = None, member_resample: str = "per_step",
                  predictor=None) -> RolloutBatch:
    """Imagined rollout through the ensemble.

    Actions come from ``policy_sampler(states, rng)``; member choice and
    Gaussian sampling use ``noise_rng`` (defaults to ``rng``). An element whose
    prediction turns non-finite is frozen at its last finite state with its
    mask zeroed from that step on; the count is in ``rollout.truncated``.
    """
    if horizon < 0:
        raise ConfigurationError("horizon must be >= 0")
    if member_resample not in MEMBER_RESAMPLE:
        raise ConfigurationError(f"member_resample must be one of {MEMBER_RESAMPLE}")
    noise_rng = rng if noise_rng is None else noise_rng
    predictor = predictor or (lambda s, a: predict_all(model, s, a))
    s = np.asarray(start, dtype=np.float64)
    b, n = s.shape
    rows = np.arange(b)
    states = np.empty((b, horizon + 1, n))
    actions = np.empty((b, horizon + 1, model.action_dim))
    log_probs = np.empty((b, horizon + 1))
    rewards = np.zeros((b, horizon))
    masks = np.zeros((b, horizon))
    alive = np.ones(b, dtype=bool)
    members = sample_member(model, noise_rng, size=b) if member_resample == "per_trajectory" else None
    for t in range(horizon + 1):
        states[:, t] = s
        act, lp = policy_sampler(s, rng)
        actions[:, t] = act
        log_probs[:, t] = lp
        if t == horizon:
            break
        mean, lv = predictor(s, act)
        idx = sample_member(model, noise_rng, size=b) if members is None else members
        mu = mean[idx, rows].astype(np.float64)
        std = np.exp(0.5 * lv[idx, rows].astype(np.float64))
        draw = mu + std * noise_rng.standard_normal(mu.shape)
        nxt = s + draw[:, :n]
        ok = alive & np.isfinite(nxt).all(axis=1) & np.isfinite(draw[:, n])
        alive = ok
        masks[:, t] = alive
        rewards[:, t] = np.where(alive, draw[:, n], 0.0)
        s = np.where(alive[:, None], nxt, s)
    return RolloutBatch(states, actions, rewards, log_probs, masks, truncated=int((~alive).sum()))


# ---------------------------------------------------------------- persistence


def save_model(path, model: EnsembleModel):
    tensors = {"net": model.net, "max_logvar": model.max_logvar, "min_logvar": model.min_logvar,
               "input_mean": model.input_mean, "input_std": model.input_std}
    meta = {"state_dim": model.state_dim, "action_dim": model.action_dim, "ensemble_size": model.size}
    return save_checkpoint(path, tensors, meta, dtype=model.net.dtype)


def load_model(path) -> EnsembleModel:
    t, meta = load_checkpoint(path)
    return EnsembleModel(t["net"], t["max_logvar"], t["min_logvar"], t["input_mean"], t["input_std"],
                         meta["state_dim"], meta["action_dim"])


def write_nll_csv(path, rows) -> Path:
    """``rows`` are ``(env_step, per_member_nll)``; columns ``env_step,member_<i>...,mean``."""
    path = Path(path)
    rows = list(rows)
    n = len(rows[0][1]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env_step"] + [f"member_{i}" for i in range(n)] + ["mean"])
        for step, nll in rows:
            nll = np.asarray(nll, dtype=np.float64)
            w.writerow([int(step)] + [repr(float(x)) for x in nll] + [repr(float(nll.mean()))])
    return path
