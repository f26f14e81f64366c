"""Small dense-network engine in float64 numpy.

Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(n, fan_in)`` maps to ``x @ W + b``.  Dropout is inverted (scaled at train
time) and applied to a layer's output.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, StaleCache, ValidationError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "identity", "softmax")


def softmax(z):
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    # split on sign so exp never overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "softmax":
        return softmax(z)
    return z


def _activation_backward(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    if name == "softmax":
        return a * (g - (g * a).sum(axis=1, keepdims=True))
    return g


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"
    dropout: float = 0.0
    frozen: bool = False

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DenseNet:
    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValidationError("a network needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {layer.activation!r}")
            if not 0.0 <= layer.dropout < 1.0:
                raise ValidationError(f"dropout {layer.dropout} outside [0, 1)")
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise ValidationError("softmax is only allowed on the final layer")
            if layer.b.shape != (layer.fan_out,):
                raise ShapeMismatch(f"layer {i}: bias shape {layer.b.shape} != ({layer.fan_out},)")
            if i and layers[i - 1].fan_out != layer.fan_in:
                raise ShapeMismatch(f"layer {i}: input width {layer.fan_in} != {layers[i - 1].fan_out}")
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def build(cls, sizes, activations, dropout=0.0, rng=None, seed=0) -> "DenseNet":
        """Glorot-initialised net; ``sizes`` includes the input width."""
        if len(activations) != len(sizes) - 1:
            raise ValidationError("need one activation per layer")
        rng = np.random.default_rng(seed) if rng is None else rng
        layers = []
        for i, act in enumerate(activations):
            drop = dropout if i < len(activations) - 1 else 0.0
            layers.append(Layer(glorot_uniform(sizes[i], sizes[i + 1], rng), np.zeros(sizes[i + 1]), act, drop))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].fan_out

    def __len__(self):
        return len(self.layers)

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def trainable(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if not layer.frozen]

    def freeze(self, indices=None) -> None:
        for i in range(len(self.layers)) if indices is None else indices:
            self.layers[i].frozen = True

    def param_bytes(self, indices=None) -> bytes:
        idx = range(len(self.layers)) if indices is None else indices
        return b"".join(self.layers[i].W.tobytes() + self.layers[i].b.tobytes() for i in idx)

    def get_params(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.W.copy(), layer.b.copy()) for layer in self.layers]

    def set_params(self, params) -> None:
        for layer, (W, b) in zip(self.layers, params):
            layer.W[...] = W
            layer.b[...] = b
        self.version += 1

    def predict(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    post: list
    masks: list
    version: int
    single: bool


def forward(net: DenseNet, x, train_mode: bool = False, rng=None):
    """Run the net; returns ``(output, cache)``.

    Eval mode (the default) never touches ``rng`` and is deterministic.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ShapeMismatch(f"input shape {x.shape} does not match width {net.n_in}")
    if train_mode and rng is None:
        rng = np.random.default_rng(0)
    inputs, pre, post, masks = [], [], [], []
    for layer in net.layers:
        inputs.append(x)
        z = x @ layer.W + layer.b
        a = _activate(layer.activation, z)
        pre.append(z)
        post.append(a)
        mask = None
        if train_mode and layer.dropout > 0:
            mask = (rng.random(a.shape) >= layer.dropout) / (1.0 - layer.dropout)
            a = a * mask
        masks.append(mask)
        x = a
    cache = ForwardCache(inputs, pre, post, masks, net.version, single)
    return (x[0] if single else x), cache


def _backprop(net, cache, grad, wrt_logits, need_input):
    if cache.version != net.version or len(cache.inputs) != len(net.layers):
        raise StaleCache("cache does not belong to the current parameters")
    g = np.asarray(grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise ShapeMismatch(f"output gradient shape {g.shape} != {cache.post[-1].shape}")
    trainable = net.trainable()
    if need_input:
        lowest = 0
    elif trainable:
        lowest = trainable[0]
    else:
        return {}, None
    grads = {}
    last = len(net.layers) - 1
    for i in range(last, lowest - 1, -1):
        layer = net.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if i == last and wrt_logits:
            dz = g
        else:
            dz = _activation_backward(layer.activation, cache.pre[i], cache.post[i], g)
        if not layer.frozen:
            grads[i] = (cache.inputs[i].T @ dz, dz.sum(axis=0))
        if i > lowest or need_input:
            g = dz @ layer.W.T
    return grads, (g if need_input else None)


def backward(net: DenseNet, cache: ForwardCache, grad, wrt_logits: bool = False) -> dict:
    """Gradients ``{layer_index: (dW, db)}`` for every trainable layer.

    ``grad`` is dL/d(output); with ``wrt_logits`` it is taken to be dL/dz of the
    final layer instead (the cross-entropy/softmax shortcut).
    """
    return _backprop(net, cache, grad, wrt_logits, need_input=False)[0]


def backward_with_input(net, cache, grad, wrt_logits=False):
    """Like :func:`backward` but also returns dL/d(input)."""
    return _backprop(net, cache, grad, wrt_logits, need_input=True)


def squared_error(pred, target, mask=None):
    """Mean over the batch of the squared L2 error; returns ``(loss, dloss/dpred)``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != diff.shape:
            raise ShapeMismatch("mask shape differs from prediction")
        diff = diff * mask
    n = diff.shape[0] if diff.ndim > 1 else 1
    return float((diff ** 2).sum() / n), 2.0 * diff / n


def cross_entropy(probs, labels):
    """Mean negative log-likelihood; gradient is w.r.t. the softmax logits."""
    probs = np.asarray(probs, dtype=float)
    single = probs.ndim == 1
    if single:
        probs = probs[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape[0] != probs.shape[0]:
        raise ShapeMismatch("one label per row required")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ShapeMismatch("label outside class range")
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(net: DenseNet, grads: dict, state: AdamState):
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (dW, db) in grads.items():
        layer = net.layers[i]
        if layer.frozen:
            continue
        for name, param, g in (("W", layer.W, dW), ("b", layer.b, db)):
            if g.shape != param.shape:
                raise ShapeMismatch(f"gradient {g.shape} for parameter {param.shape}")
            key = (i, name)
            m = state.m.get(key)
            if m is None:
                m = state.m[key] = np.zeros_like(param)
                state.v[key] = np.zeros_like(param)
            v = state.v[key]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += state.eps
            np.divide(m, denom, out=denom)
            denom *= state.lr / c1
            param -= denom
    net.version += 1
    return net, state


def gradient_check(params, loss_fn, analytic, h=1e-5) -> float:
    """Worst relative error between ``analytic`` gradients and central differences.

    ``params`` are arrays perturbed in place; ``loss_fn()`` re-evaluates the loss.
    """
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        a = np.asarray(a).reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss_fn()
            flat[k] = old - h
            down = loss_fn()
            flat[k] = old
            num = (up - down) / (2 * h)
            denom = max(abs(a[k]), abs(num), 1e-8)
            worst = max(worst, abs(a[k] - num) / denom)
    return worst


def finite_diff_check(net: DenseNet, x, loss, h: float = 1e-5, wrt_logits: bool = False) -> float:
    """Compare backprop against central differences for every trainable parameter.

    ``loss(output) -> (value, grad)``.  Dropout is ignored (eval-mode forward).
    """
    out, cache = forward(net, x)
    _, g = loss(out)
    grads = backward(net, cache, g, wrt_logits=wrt_logits)
    params, analytic = [], []
    for i in sorted(grads):
        params += [net.layers[i].W, net.layers[i].b]
        analytic += list(grads[i])

    def f():
        return loss(forward(net, x)[0])[0]

    return gradient_check(params, f, analytic, h)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    dropout: float = 0.1
    seed: int = 0
    patience: int = 10
    min_delta: float = 0.0  # relative improvement a new best validation loss must make

    def __post_init__(self):
        if self.min_delta < 0:
            raise ValidationError("min_delta must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def _loss(kind, out, y, mask):
    if kind == "xent":
        return cross_entropy(out, y)
    return squared_error(out, y, mask)


def evaluate_loss(net, X, Y, kind="mse", mask=None) -> float:
    return _loss(kind, forward(net, X)[0], Y, mask)[0]


def fit(net: DenseNet, X, Y, cfg: TrainConfig, loss: str = "mse", X_val=None, Y_val=None,
        mask=None, mask_val=None) -> History:
    """Mini-batch Adam with early stopping on validation loss.

    The parameters from the best validation epoch are restored on return; an
    epoch only counts as a new best if it beats the old one by ``min_delta``
    (relative).
    Without a validation set the training loss drives early stopping.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y) if loss == "xent" else np.asarray(Y, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.asarray(X_val, dtype=float)
        Y_val = np.asarray(Y_val) if loss == "xent" else np.asarray(Y_val, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    wrt_logits = loss == "xent"
    hist = History()
    best = net.get_params()
    n = len(X)
    if n == 0:
        return hist
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            out, cache = forward(net, X[idx], train_mode=True, rng=rng)
            value, g = _loss(loss, out, Y[idx], None if mask is None else mask[idx])
            total += value * len(idx)
            adam_step(net, backward(net, cache, g, wrt_logits=wrt_logits), state)
        hist.train_loss.append(total / n)
        if has_val:
            val = evaluate_loss(net, X_val, Y_val, loss, mask_val)
        else:
            val = hist.train_loss[-1]
        hist.val_loss.append(val)
        if hist.best_epoch == 0 or val < hist.best_val - cfg.min_delta * abs(hist.best_val):
            hist.best_val = val
            hist.best_epoch = epoch
            best = net.get_params()
        elif epoch - hist.best_epoch >= cfg.patience:
            break
    net.set_params(best)
    return hist


# -- serialisation helpers (arrays + JSON-able metadata) ---------------------

def net_to_record(net: DenseNet, prefix: str):
    meta = {
        "layers": [
            {"fan_in": l.fan_in, "fan_out": l.fan_out, "activation": l.activation,
             "dropout": l.dropout, "frozen": l.frozen}
            for l in net.layers
        ]
    }
    arrays = {}
    for i, l in enumerate(net.layers):
        arrays[f"{prefix}.{i}.W"] = l.W
        arrays[f"{prefix}.{i}.b"] = l.b
    return meta, arrays


def net_from_record(meta: dict, arrays: dict, prefix: str) -> DenseNet:
    layers = []
    for i, spec in enumerate(meta["layers"]):
        W = np.array(arrays[f"{prefix}.{i}.W"], dtype=float).reshape(spec["fan_in"], spec["fan_out"])
        b = np.array(arrays[f"{prefix}.{i}.b"], dtype=float).reshape(spec["fan_out"])
        layers.append(Layer(W, b, spec["activation"], spec["dropout"], spec["frozen"]))
    return DenseNet(layers)
