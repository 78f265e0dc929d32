"""Small neural-network core: MLPs with hand-written backprop, Adam, and the
tanh-squashed Gaussian used by the policy.

Weights are stored ``[..., out, in]`` so a leading axis can hold an ensemble
of independent networks (twin critics, dynamics members) evaluated with a
single batched ``matmul``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigurationError("weights, biases and activations differ in length")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[-1] != self.weights[k - 1].shape[-2]:
                raise ConfigurationError(
                    f"layer {k} expects {self.weights[k].shape[-1]} inputs, "
                    f"previous layer gives {self.weights[k - 1].shape[-2]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[-1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[-2]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def ensemble_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [w.shape for w in self.weights]

    def leaves(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_leaves(self, leaves: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(list(leaves[0::2]), list(leaves[1::2]), self.activations)

    def copy(self) -> "MlpParams":
        return self.with_leaves([x.copy() for x in self.leaves()])

    def zeros_like(self) -> "MlpParams":
        return self.with_leaves([np.zeros_like(x) for x in self.leaves()])

    def astype(self, dtype) -> "MlpParams":
        return self.with_leaves([x.astype(dtype) for x in self.leaves()])

    def member(self, i: int) -> "MlpParams":
        """Slice one network out of a stacked ensemble."""
        return self.with_leaves([x[i] for x in self.leaves()])

    def is_finite(self) -> bool:
        return all(np.isfinite(x).all() for x in self.leaves())


def stack_params(members: Sequence[MlpParams]) -> MlpParams:
    leaves = zip(*(m.leaves() for m in members))
    return members[0].with_leaves([np.stack(x) for x in leaves])


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "linear",
    ensemble: int | None = None,
    dtype=np.float64,
) -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) initialisation, one layer per consecutive pair in ``sizes``."""
    lead = () if ensemble is None else (ensemble,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, lead + (fan_out, fan_in)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, lead + (fan_out,)).astype(dtype))
    acts = (hidden_activation,) * (len(sizes) - 2) + (output_activation,)
    return MlpParams(weights, biases, acts)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0)
    if act == "tanh":
        return np.tanh(z)
    return z


def mlp_forward(params: MlpParams, x: np.ndarray, return_cache: bool = False):
    """Evaluate the network on ``x`` of shape ``[..., B, in]``.

    With ``return_cache=True`` also returns what :func:`mlp_backward` needs.
    """
    if x.shape[-1] != params.in_dim:
        raise ConfigurationError(f"input width {x.shape[-1]} != network input {params.in_dim}")
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ConfigurationError("input must have shape [..., B, in] with B >= 1")
    h = x
    cache = []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = np.matmul(h, np.swapaxes(w, -1, -2)) + b[..., None, :]
        out = _activate(z, act)
        cache.append((h, out))
        h = out
    if return_cache:
        return h, cache
    return h


def mlp_backward(params: MlpParams, cache, grad_out: np.ndarray):
    """Backpropagate ``grad_out`` (dL/d output). Returns ``(param_grads, dL/d input)``.

    The input gradient keeps any ensemble axis that broadcasting introduced;
    callers sum it away when several networks share one input.
    """
    g = grad_out
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in reversed(range(len(params.weights))):
        h_in, out = cache[k]
        act = params.activations[k]
        if act == "relu":
            g = g * (out > 0)
        elif act == "tanh":
            g = g * (1 - out * out)
        gwk = np.matmul(np.swapaxes(g, -1, -2), h_in)
        # reduce broadcast dims (e.g. shared input across an ensemble)
        while gwk.ndim > params.weights[k].ndim:
            gwk = gwk.sum(0)
        gbk = g.sum(-2)
        while gbk.ndim > params.biases[k].ndim:
            gbk = gbk.sum(0)
        gw[k], gb[k] = gwk, gbk
        g = np.matmul(g, params.weights[k])
    return MlpParams(gw, gb, params.activations), g


LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def value_and_grad(params: MlpParams, x: np.ndarray, loss_fn: LossFn):
    """Scalar loss of the network output and its exact parameter gradient.

    ``loss_fn`` maps the network output to ``(value, dvalue/doutput)``.
    """
    out, cache = mlp_forward(params, x, return_cache=True)
    value, grad_out = loss_fn(out)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value!r}")
    grads, _ = mlp_backward(params, cache, grad_out)
    return float(value), grads


def grad(params: MlpParams, x: np.ndarray, loss_fn: LossFn) -> MlpParams:
    return value_and_grad(params, x, loss_fn)[1]


def finite_difference_grad(f: Callable[[MlpParams], float], params: MlpParams, eps: float = 1e-5) -> MlpParams:
    """Central differences, one scalar parameter at a time. Test oracle; slow."""
    leaves = [x.copy() for x in params.leaves()]
    out = []
    for i, leaf in enumerate(leaves):
        g = np.zeros_like(leaf)
        flat, gflat = leaf.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = f(params.with_leaves(leaves))
            flat[j] = orig - eps
            down = f(params.with_leaves(leaves))
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        out.append(g)
    return params.with_leaves(out)


def mse_loss(target: np.ndarray) -> LossFn:
    """0.5 * mean over rows of the squared error summed over output columns."""

    def fn(out):
        diff = out - target
        n = out.shape[-2]
        return 0.5 * float(np.sum(diff * diff)) / n, diff / n

    return fn


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def _as_leaves(tree):
    if isinstance(tree, MlpParams):
        return tree.leaves()
    if isinstance(tree, (np.ndarray, np.generic)):
        return [np.asarray(tree)]
    return list(tree)


def _rebuild(like, leaves):
    if isinstance(like, MlpParams):
        return like.with_leaves(leaves)
    if isinstance(like, (np.ndarray, np.generic)):
        return leaves[0]
    return list(leaves)


def adam_init(params) -> AdamState:
    """Zero moments for an ``MlpParams``, a single array, or a list of arrays."""
    leaves = _as_leaves(params)
    return AdamState([np.zeros_like(x) for x in leaves], [np.zeros_like(x) for x in leaves], 0)


def adam_step(params, grads, state: AdamState, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    p_leaves, g_leaves = _as_leaves(params), _as_leaves(grads)
    if len(p_leaves) != len(g_leaves) or any(p.shape != g.shape for p, g in zip(p_leaves, g_leaves)):
        raise ConfigurationError("parameter and gradient shapes disagree")
    for g in g_leaves:
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient passed to adam_step")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_leaves, g_leaves, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        new_p.append(np.asarray(p - step, dtype=p.dtype))
        new_m.append(np.asarray(m, dtype=p.dtype))
        new_v.append(np.asarray(v, dtype=p.dtype))
    return _rebuild(params, new_p), AdamState(new_m, new_v, t)


# ---------------------------------------------------------------- squashed Gaussian


def softplus(x):
    return np.logaddexp(0.0, x)


def tanh_log_det(u):
    """log(1 - tanh(u)^2), elementwise, without underflow for large |u|."""
    return 2.0 * (math.log(2.0) - u - softplus(-2.0 * u))


@dataclass
class SquashedGaussian:
    """Diagonal Gaussian in pre-tanh space. ``log_std`` is clamped on construction."""

    mean: np.ndarray
    log_std: np.ndarray
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX
    raw_log_std: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.raw_log_std = self.log_std
        self.log_std = np.clip(self.log_std, self.log_std_min, self.log_std_max)

    @property
    def std(self):
        return np.exp(self.log_std)

    def mode(self):
        return np.tanh(self.mean)


def squashed_gaussian_sample_logprob(dist: SquashedGaussian, noise: np.ndarray):
    """Reparameterised sample ``tanh(mean + std * noise)`` and its log-density.

    Log-probabilities are summed over the last (action) axis.
    """
    u = dist.mean + dist.std * noise
    action = np.tanh(u)
    gauss = -0.5 * noise * noise - dist.log_std - _HALF_LOG_2PI
    log_prob = np.sum(gauss - tanh_log_det(u), axis=-1)
    return action, log_prob


def squashed_gaussian_log_prob(dist: SquashedGaussian, action: np.ndarray):
    """Log-density of a given action in (-1, 1)^m."""
    u = np.arctanh(action)
    z = (u - dist.mean) / dist.std
    gauss = -0.5 * z * z - dist.log_std - _HALF_LOG_2PI
    return np.sum(gauss - tanh_log_det(u), axis=-1)


def gaussian_log_prob(mean, log_std, u):
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


# ---------------------------------------------------------------- checkpoints
#
# An ``.npz`` container (never pickled). Every array is stored explicitly
# little-endian ('<f8' or '<f4'). The entry ``__manifest__`` holds UTF-8 JSON
# describing each stored tensor (name, shape, dtype) plus free-form metadata.


def save_checkpoint(path, tensors: dict, meta: dict | None = None, dtype=np.float64) -> Path:
    """Write named ``MlpParams`` / arrays. ``MlpParams`` entries are flattened as
    ``<name>/W<k>`` and ``<name>/b<k>`` and their activations recorded."""
    path = Path(path)
    dt = np.dtype(dtype).newbyteorder("<")
    arrays, manifest = {}, {"byte_order": "little", "dtype": dt.str, "tensors": {}, "networks": {}, "meta": meta or {}}
    for name, value in tensors.items():
        if isinstance(value, MlpParams):
            manifest["networks"][name] = {"activations": list(value.activations), "layers": len(value.weights)}
            for k, (w, b) in enumerate(zip(value.weights, value.biases)):
                arrays[f"{name}/W{k}"] = w
                arrays[f"{name}/b{k}"] = b
        else:
            arrays[name] = np.asarray(value)
    out = {}
    for key, arr in arrays.items():
        out[key] = np.asarray(arr, dtype=dt).copy(order="C")
        manifest["tensors"][key] = {"shape": list(arr.shape), "dtype": dt.str}
    out["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **out)
    return path


def load_checkpoint(path, dtype=None):
    """Inverse of :func:`save_checkpoint`. Returns ``(tensors, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        manifest = json.loads(bytes(data["__manifest__"]).decode())
        raw = {k: data[k] for k in manifest["tensors"]}
    for key, info in manifest["tensors"].items():
        if list(raw[key].shape) != info["shape"]:
            raise ConfigurationError(f"tensor {key} has shape {raw[key].shape}, manifest says {info['shape']}")
    cast = (lambda a: a.astype(dtype)) if dtype is not None else (lambda a: a.astype(a.dtype.newbyteorder("=")))
    tensors = {}
    for name, info in manifest["networks"].items():
        n = info["layers"]
        tensors[name] = MlpParams(
            [cast(raw.pop(f"{name}/W{k}")) for k in range(n)],
            [cast(raw.pop(f"{name}/b{k}")) for k in range(n)],
            tuple(info["activations"]),
        )
    for key, arr in raw.items():
        tensors[key] = cast(arr)
    return tensors, manifest["meta"]
