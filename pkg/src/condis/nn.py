"""Minimal dense neural-network machinery with explicit reverse-mode gradients.

Everything is float64 and deterministic given a seed.  The only
architectures needed are affine/ReLU stacks, so the forward pass returns an
explicit cache that the backward pass consumes; no general autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LabelOutOfRange,
    NonFiniteGradient,
    SchemaMismatch,
    ShapeMismatch,
)


@dataclass
class ParamStore:
    """Named parameter arrays with matching gradient buffers."""

    params: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray):
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def names(self):
        return list(self.params)


@dataclass(frozen=True)
class MlpSpec:
    """Affine/ReLU stack: input -> hidden layers (ReLU) -> affine output."""

    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    store = ParamStore()
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        store.add(f"W{i}", rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])))
        store.add(f"b{i}", rng.uniform(-bound, bound, size=(dims[i + 1],)))
    return store


def mlp_forward(spec: MlpSpec, store: ParamStore, x: np.ndarray):
    """Forward pass.  Returns (output, cache) where the cache holds each
    layer's input, sufficient for the exact reverse pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatch(
            f"input must be (batch, {spec.input_dim}), got {x.shape}"
        )
    n_layers = len(spec.layer_dims) - 1
    cache = []
    h = x
    for i in range(n_layers):
        pre = h @ store.params[f"W{i}"] + store.params[f"b{i}"]
        cache.append(h)
        if i < n_layers - 1:
            h = np.maximum(pre, 0.0)
            cache.append(pre)
        else:
            h = pre
    return h, cache


def mlp_backward(spec: MlpSpec, store: ParamStore, cache, dout: np.ndarray) -> np.ndarray:
    """Reverse pass.  Accumulates parameter gradients into the store and
    returns the gradient with respect to the input batch."""
    n_layers = len(spec.layer_dims) - 1
    d = np.asarray(dout, dtype=np.float64)
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:
            pre = cache[2 * i + 1]
            d = d * (pre > 0.0)
        h_in = cache[2 * i]
        store.grads[f"W{i}"] += h_in.T @ d
        store.grads[f"b{i}"] += d.sum(axis=0)
        d = d @ store.params[f"W{i}"].T
    return d


def cross_entropy_logits(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy of logits against integer labels.

    Returns (loss, dloss/dlogits) with the gradient already divided by the
    batch size: (softmax - onehot) / n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    loss = float(np.mean(logsumexp - logits[np.arange(n), labels]))
    softmax = np.exp(shifted)
    softmax /= softmax.sum(axis=1, keepdims=True)
    grad = softmax
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def bce_logits(logits: np.ndarray, targets: np.ndarray):
    """Mean binary cross entropy on logits, numerically stable.

    loss = mean(softplus(logit) - target * logit); returns (loss, grad).
    """
    logits = np.asarray(logits, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    softplus = np.logaddexp(0.0, logits)
    loss = float(np.mean(softplus - targets * logits))
    sigma = _sigmoid(logits)
    return loss, (sigma - targets) / logits.size


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_sigmoid_mean(logits: np.ndarray):
    """mean(log sigmoid(d)) and its gradient; this is mean(log D) in the
    adversarial losses."""
    d = np.asarray(logits, dtype=np.float64).ravel()
    value = float(np.mean(-np.logaddexp(0.0, -d)))
    return value, _sigmoid(-d) / d.size


def log_one_minus_sigmoid_mean(logits: np.ndarray):
    """mean(log(1 - sigmoid(d))) and its gradient; mean(log(1 - D))."""
    d = np.asarray(logits, dtype=np.float64).ravel()
    value = float(np.mean(-np.logaddexp(0.0, d)))
    return value, -_sigmoid(d) / d.size


@dataclass
class AdamState:
    """Bias-corrected Adam with the standard constants."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, store: ParamStore):
    """One bias-corrected update of every parameter from its gradient buffer."""
    state.step_count += 1
    t = state.step_count
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name!r} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        store.params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


CHECKPOINT_HASH_KEY = "__config_hash__"


def save_checkpoint(path, named_arrays: dict, config_hash: str):
    """Write named parameter arrays plus the run's config hash.

    The container stores each array with its shape header; loading is
    bit-exact for float64 payloads.
    """
    payload = {k: np.asarray(v) for k, v in named_arrays.items()}
    if CHECKPOINT_HASH_KEY in payload:
        raise ValueError(f"{CHECKPOINT_HASH_KEY} is reserved")
    payload[CHECKPOINT_HASH_KEY] = np.array(config_hash)
    np.savez(path, **payload)


def load_checkpoint(path, expected_hash: str | None = None):
    """Load a checkpoint; returns (named_arrays, config_hash).

    Raises SchemaMismatch when the stored hash disagrees with
    `expected_hash` or the container lacks a hash entry.
    """
    with np.load(path) as data:
        if CHECKPOINT_HASH_KEY not in data:
            raise SchemaMismatch("checkpoint has no config hash entry")
        config_hash = str(data[CHECKPOINT_HASH_KEY])
        if expected_hash is not None and config_hash != expected_hash:
            raise SchemaMismatch(
                f"checkpoint config hash {config_hash} != expected {expected_hash}"
            )
        arrays = {k: data[k] for k in data.files if k != CHECKPOINT_HASH_KEY}
    return arrays, config_hash
