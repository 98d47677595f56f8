"""Hand-rolled neural-network engine.

Dense layers with ReLU/identity activations and optional residual skips,
manual reverse-mode gradients, SGD with optional global-norm clipping, EMA
parameter tracking, cosine/MSE losses, and a finite-difference checker.
A "unit" output activation projects each output row onto the unit sphere;
a per-batch feature standardization op is provided as an optional building
block (unused by default: it couples samples within a batch).
Everything trains in float64; checkpoints downcast to float32 (see serial).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

ACTIVATIONS = ("relu", "linear", "unit")

# row norms below this are treated as linear 1/eps scaling (guards 0-vectors)
UNIT_EPS = 1e-12

# grads are [(dW, db), ...] aligned with Mlp.weights/biases
Grads = list


@dataclass
class Mlp:
    weights: list  # each (out_dim, in_dim) float64
    biases: list  # each (out_dim,) float64
    activations: tuple
    residual: tuple

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations) == len(self.residual)):
            raise ConfigurationError("layer metadata lengths disagree")
        if len(self.weights) == 0:
            raise ConfigurationError("empty network")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ConfigurationError(f"layer {i} weight/bias shapes incompatible")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigurationError(f"layer {i} input dim mismatch")
            if self.activations[i] not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {self.activations[i]!r}")
            if self.residual[i] and w.shape[0] != w.shape[1]:
                raise ConfigurationError(f"residual layer {i} needs in_dim == out_dim")
            if self.activations[i] == "unit" and (i != len(self.weights) - 1 or self.residual[i]):
                raise ConfigurationError("unit activation is output-only and non-residual")
        if self.activations[-1] not in ("linear", "unit"):
            raise ConfigurationError("output layer must be linear or unit")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def param_items(self):
        """Named tensors in declaration order (w0, b0, w1, b1, ...)."""
        items = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            items.append((f"w{i}", w))
            items.append((f"b{i}", b))
        return items

    def flat(self) -> np.ndarray:
        """Copy of all parameters as one vector, declaration order."""
        return np.concatenate([t.ravel() for _, t in self.param_items()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ConfigurationError("flat vector length mismatch")
        offset = 0
        for _, t in self.param_items():
            t[...] = vec[offset : offset + t.size].reshape(t.shape)
            offset += t.size

    def clone(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
            self.residual,
        )


def init_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    activations: Optional[Sequence[str]] = None,
    residual: Optional[Sequence[bool]] = None,
    unit_output: bool = False,
) -> Mlp:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.

    ``unit_output`` swaps the default final activation for "unit" (row-wise
    projection onto the unit sphere).
    """
    if len(dims) < 2:
        raise ConfigurationError("need at least one layer")
    n = len(dims) - 1
    if activations is None:
        activations = ["relu"] * (n - 1) + ["unit" if unit_output else "linear"]
    if residual is None:
        residual = [False] * n
    weights, biases = [], []
    for i in range(n):
        bound = math.sqrt(6.0 / (dims[i] + dims[i + 1]))
        weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
    return Mlp(weights, biases, tuple(activations), tuple(residual))


@dataclass
class ForwardCache:
    layers: list  # per layer (input, preactivation), batch-major
    single: bool  # input was 1-D


def forward(net: Mlp, x: np.ndarray) -> tuple:
    """Returns (output, cache). Accepts (d,) or (batch, d) float input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.in_dim:
        raise ConfigurationError(f"input dim {h.shape[1]} != network input {net.in_dim}")
    layers = []
    for w, b, act, res in zip(net.weights, net.biases, net.activations, net.residual):
        pre = h @ w.T + b
        if act == "relu":
            out = np.maximum(pre, 0.0)
        elif act == "unit":
            norms = np.sqrt((pre * pre).sum(axis=1))
            out = pre / np.maximum(norms, UNIT_EPS)[:, None]
        else:
            out = pre
        if res:
            out = out + h
        layers.append((h, pre))
        h = out
    return (h[0] if single else h), ForwardCache(layers, single)


def backward(net: Mlp, cache: ForwardCache, grad_out: np.ndarray) -> tuple:
    """Exact reverse-mode gradients: returns (grads, grad_input)."""
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != (cache.layers[-1][0].shape[0], net.out_dim):
        raise ConfigurationError("grad_out shape mismatch")
    grads: Grads = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        x_in, pre = cache.layers[i]
        act = net.activations[i]
        if act == "relu":
            d_pre = g * (pre > 0.0)
        elif act == "unit":
            # Jacobian of p/|p| is (I - y y^T)/|p|; below eps the map is linear
            norms = np.sqrt((pre * pre).sum(axis=1))
            denom = np.maximum(norms, UNIT_EPS)
            y = pre / denom[:, None]
            dot = (g * y).sum(axis=1)
            d_pre = (g - ((norms > UNIT_EPS) * dot)[:, None] * y) / denom[:, None]
        else:
            d_pre = g
        dw = d_pre.T @ x_in
        db = d_pre.sum(axis=0)
        g_next = d_pre @ net.weights[i]
        if net.residual[i]:
            g_next = g_next + g
        grads[i] = (dw, db)
        g = g_next
    return grads, (g[0] if cache.single else g)


def zero_grads(net: Mlp) -> Grads:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]


def add_grads(total: Grads, extra: Grads) -> Grads:
    return [(tw + ew, tb + eb) for (tw, tb), (ew, eb) in zip(total, extra)]


def scale_grads(grads: Grads, factor: float) -> Grads:
    return [(w * factor, b * factor) for w, b in grads]


def cosine_loss(pred: np.ndarray, target: np.ndarray, eps: float = 1e-8) -> tuple:
    """loss = 1 - <pred, target> / (|pred| |target|), batch-averaged.

    Targets are constants (stop-gradient); returns (loss, grad wrt pred).
    Zero norms are guarded by ``eps`` in the denominators.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigurationError("cosine_loss shape mismatch")
    single = p.ndim == 1
    if single:
        p = p[None, :]
        t = t[None, :]
    batch = p.shape[0]
    np_ = np.sqrt((p * p).sum(axis=1))
    nt = np.sqrt((t * t).sum(axis=1))
    ut = t / (nt + eps)[:, None]
    dot = (p * ut).sum(axis=1)
    denom = np_ + eps
    cos = dot / denom
    loss = float(np.mean(1.0 - cos))
    # d cos / dp = ut/denom - dot * p / (|p| * denom^2); second term vanishes as p -> 0
    inv_np = np.where(np_ > 0.0, 1.0 / np.where(np_ > 0.0, np_, 1.0), 0.0)
    grad = -(ut / denom[:, None] - (dot * inv_np / (denom * denom))[:, None] * p) / batch
    return loss, (grad[0] if single else grad)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple:
    """Mean squared error over all elements; returns (loss, grad wrt pred)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigurationError("mse_loss shape mismatch")
    diff = p - t
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def feature_standardize(x: np.ndarray, eps: float = 1e-8) -> tuple:
    """Standardize each feature to zero mean / unit variance across the batch.

    Optional building block, off by default everywhere: it couples samples
    within a batch, so single-sample evaluation cannot reproduce training
    statistics. Returns (standardized, cache) for the backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError("feature_standardize needs a (batch >= 2, features) array")
    centered = x - x.mean(axis=0)
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std
    return y, (y, inv_std)


def feature_standardize_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    """Exact input gradient for feature_standardize."""
    y, inv_std = cache
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != y.shape:
        raise ConfigurationError("grad_out shape mismatch")
    batch = y.shape[0]
    return (inv_std / batch) * (batch * g - g.sum(axis=0) - y * (g * y).sum(axis=0))


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-2
    batch_size: int = 256
    epochs: int = 200
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive when set")


def grad_global_norm(grad_sets: Sequence[Grads]) -> float:
    total = 0.0
    for grads in grad_sets:
        for dw, db in grads:
            total += float((dw * dw).sum()) + float((db * db).sum())
    return math.sqrt(total)


def sgd_step_joint(nets_and_grads: Sequence[tuple], cfg: SgdConfig) -> bool:
    """One SGD step over several networks treated as a joint parameter set.

    Clipping (when configured) uses the joint global norm. A non-finite
    gradient anywhere rejects the whole step and returns False.
    """
    grad_sets = [g for _, g in nets_and_grads]
    for grads in grad_sets:
        for dw, db in grads:
            if not (np.isfinite(dw).all() and np.isfinite(db).all()):
                return False
    factor = 1.0
    if cfg.grad_clip is not None:
        norm = grad_global_norm(grad_sets)
        if norm > cfg.grad_clip:
            factor = cfg.grad_clip / norm
    lr = cfg.learning_rate * factor
    for net, grads in nets_and_grads:
        for (w, b), (dw, db) in zip(zip(net.weights, net.biases), grads):
            w -= lr * dw
            b -= lr * db
    return True


def sgd_step(net: Mlp, grads: Grads, cfg: SgdConfig) -> bool:
    return sgd_step_joint([(net, grads)], cfg)


def ema_update(target: Mlp, online: Mlp, eta: float) -> None:
    """In-place convex combination: target <- eta * target + (1 - eta) * online."""
    if not (0.0 <= eta <= 1.0):
        raise ConfigurationError("eta must lie in [0, 1]")
    one_minus = 1.0 - eta
    for (_, tt), (_, ot) in zip(target.param_items(), online.param_items()):
        if tt.shape != ot.shape:
            raise ConfigurationError("EMA shape mismatch")
        tt[...] = eta * tt + one_minus * ot


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x0: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    base = x0.copy().reshape(-1)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + eps
        up = f(base.reshape(x0.shape))
        base[i] = saved - eps
        down = f(base.reshape(x0.shape))
        base[i] = saved
        flat[i] = (up - down) / (2.0 * eps)
    return grad
