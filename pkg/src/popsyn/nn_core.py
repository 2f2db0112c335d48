"""Dense MLP engine: forward/backward, losses, Adam, finite-difference checks.

Everything runs in float64.  Weights are stored ``(out, in)`` and a layer
computes ``act(x @ W.T + b)`` on row batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from popsyn import _kernels
from popsyn.errors import ShapeMismatch
from popsyn.rng import Rng

EPS_CLIP = 1e-7
LEAKY_SLOPE = 0.2

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh", "softmax_blocks", "linear")


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(v):
    """Softmax over the last axis with max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "linear"
    alpha: float = LEAKY_SLOPE
    layout: object = None  # BlockLayout, for softmax_blocks only

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "softmax_blocks":
            if self.layout is None or self.layout.width != self.out_dim:
                raise ValueError("softmax_blocks needs a layout matching the output width")
        if self.biases.shape != (self.out_dim,):
            raise ShapeMismatch(f"bias shape {self.biases.shape} vs weights {self.weights.shape}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def activate(self, z):
        a = self.activation
        if a == "linear":
            return z
        if a == "relu":
            return np.maximum(z, 0.0)
        if a == "leaky_relu":
            return np.where(z > 0, z, self.alpha * z)
        if a == "sigmoid":
            return sigmoid(z)
        if a == "tanh":
            return np.tanh(z)
        # softmax_blocks: softmax per one-hot block, tanh on numeric slots
        lay = self.layout
        out = _kernels.block_softmax(z, lay.onehot_offsets, lay.onehot_widths)
        num = lay.numeric_positions
        if len(num):
            out[:, num] = np.tanh(z[:, num])
        return out

    def activate_backward(self, z, y, g):
        a = self.activation
        if a == "linear":
            return g
        if a == "relu":
            return g * (z > 0)
        if a == "leaky_relu":
            return g * np.where(z > 0, 1.0, self.alpha)
        if a == "sigmoid":
            return g * y * (1.0 - y)
        if a == "tanh":
            return g * (1.0 - y * y)
        lay = self.layout
        out = _kernels.block_softmax_backward(y, g, lay.onehot_offsets, lay.onehot_widths)
        num = lay.numeric_positions
        if len(num):
            out[:, num] = g[:, num] * (1.0 - y[:, num] ** 2)
        return out


@dataclass
class MlpNetwork:
    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeMismatch(f"layer widths {a.out_dim} -> {b.in_dim} do not chain")

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def sizes(self):
        return [self.input_dim] + [l.out_dim for l in self.layers]

    def params(self):
        """Parameter arrays (live references) as ``[W0, b0, W1, b1, ...]``."""
        out = []
        for l in self.layers:
            out.extend((l.weights, l.biases))
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return MlpNetwork([DenseLayer(l.weights.copy(), l.biases.copy(), l.activation,
                                      l.alpha, l.layout) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)[0]


def build_mlp(sizes, hidden_activation, output_activation, seed, alpha=LEAKY_SLOPE, layout=None):
    """Glorot-uniform weights and zero biases, drawn layer by layer from ``Rng(seed)``."""
    rng = Rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = (2.0 * rng.uniform((fan_out, fan_in)) - 1.0) * limit
        last = i == len(sizes) - 2
        layers.append(DenseLayer(
            w, np.zeros(fan_out),
            output_activation if last else hidden_activation,
            alpha=alpha,
            layout=layout if last else None,
        ))
    return MlpNetwork(layers)


def forward(net, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeMismatch(f"batch shape {x.shape} vs input_dim {net.input_dim}")
    cache = []
    for layer in net.layers:
        z = x @ layer.weights.T + layer.biases
        y = layer.activate(z)
        cache.append((x, z, y))
        x = y
    return x, cache


def backward(net, cache, output_gradient):
    """Returns ``(grads, input_grad)`` with grads laid out like ``net.params()``."""
    g = np.asarray(output_gradient, dtype=np.float64)
    if len(cache) != len(net.layers) or g.shape != cache[-1][2].shape:
        raise ShapeMismatch("output gradient does not match the cached forward pass")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x, z, y = cache[i]
        dz = layer.activate_backward(z, y, g)
        grads[2 * i] = dz.T @ x
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ layer.weights
    return grads, g


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def bce_loss(predictions, targets):
    """Mean binary cross-entropy and its gradient w.r.t. the predictions.

    Predictions are clipped to [1e-7, 1 - 1e-7]; the gradient is the
    unclipped formula evaluated at the clipped value.
    """
    p = np.clip(np.asarray(predictions, dtype=np.float64), EPS_CLIP, 1.0 - EPS_CLIP)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"predictions {p.shape} vs targets {t.shape}")
    n = p.size
    loss = -np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)) / n
    grad = (-(t / p) + (1.0 - t) / (1.0 - p)) / n
    return float(loss), grad


def reconstruction_loss(output, target, layout):
    """Cross-entropy per one-hot block plus squared error per numeric slot,
    summed over blocks and averaged over rows."""
    o = np.asarray(output, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if o.shape != t.shape or o.ndim != 2 or o.shape[1] != layout.width:
        raise ShapeMismatch(f"output {o.shape} vs target {t.shape} (width {layout.width})")
    n = o.shape[0]
    grad = np.zeros_like(o)
    total = 0.0
    for b in layout.blocks:
        sl = slice(b.offset, b.offset + b.width)
        if b.kind == "one-hot":
            oc = np.maximum(o[:, sl], EPS_CLIP)
            total -= np.sum(t[:, sl] * np.log(oc))
            grad[:, sl] = -t[:, sl] / oc
        else:
            d = o[:, sl] - t[:, sl]
            total += np.sum(d * d)
            grad[:, sl] = 2.0 * d
    return float(total / n), grad / n


def kl_standard_normal(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over dims, averaged over rows.

    Returns ``(kl, (d_mu, d_log_var))``.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    lv = np.atleast_2d(np.asarray(log_var, dtype=np.float64))
    if mu.shape != lv.shape:
        raise ShapeMismatch(f"mu {mu.shape} vs log_var {lv.shape}")
    n = mu.shape[0]
    var = np.exp(lv)
    kl = -0.5 * np.sum(1.0 + lv - mu * mu - var) / n
    return float(kl), (mu / n, -0.5 * (1.0 - var) / n)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(lr, beta1, beta2, eps, 0,
                   [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --------------------------------------------------------------------------
# finite-difference gradient check
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    worst: list  # (param index, flat index, analytic, numeric, rel error)
    n_checked: int
    floor: float = 0.0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def gradient_check(loss_fn, params, epsilon=1e-5, tolerance=1e-4, floor=1e-7, n_worst=5,
                   value_fn=None):
    """Compare analytic gradients with central differences, entry by entry.

    ``loss_fn(params)`` returns ``(loss, grads)``; it is called once for the
    analytic gradient and then twice per entry with that entry perturbed in
    place by +-epsilon.  Relative error is ``|a - f| / max(|a|, |f|, floor')``
    where ``floor'`` is the larger of ``floor`` and the roundoff of the
    difference quotient, ``eps64 * max(|loss|, 1) / (epsilon * tolerance)``:
    an entry too small for central differences to resolve must then agree
    to within that roundoff.  ``value_fn(params)``, when given, returns the
    loss alone and is used for the perturbed evaluations.
    """
    loss0, analytic = loss_fn(params)
    if value_fn is None:
        def value_fn(ps):
            return loss_fn(ps)[0]
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    noise = np.finfo(np.float64).eps * max(abs(float(loss0)), 1.0) / epsilon
    floor = max(floor, noise / tolerance)
    records = []
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("gradient_check needs contiguous parameter arrays")
        ga = analytic[pi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = value_fn(params)
            flat[j] = orig - epsilon
            lm = value_fn(params)
            flat[j] = orig
            num = (lp - lm) / (2.0 * epsilon)
            a = ga[j]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            records.append((pi, j, float(a), float(num), float(rel)))
    records.sort(key=lambda r: -r[4])
    worst = records[:n_worst]
    return GradCheckReport(worst[0][4] if worst else 0.0, tolerance, worst, len(records), floor)
