"""Minimal neural-network substrate with explicit analytic gradients.

Dense and convolutional layers, activations, pixel shuffle, reshape and
residual containers, the usual losses, and Adam. Everything runs in float64
on numpy; forward passes are pure, caches are explicit, and every backward
pass is checked against central finite differences in the test suite.

Inputs are always batched: (N, features) for dense layers and
(N, channels, height, width) for convolutional ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Dense:
    """Affine layer: y = x @ W + b, W shaped (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_out = n_in, n_out
        if rng is None:
            self.W = np.zeros((n_in, n_out))
        else:
            self.W = glorot_uniform(rng, n_in, n_out, (n_in, n_out))
        self.b = np.zeros(n_out)

    @property
    def params(self):
        return [self.W, self.b]

    def spec(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out}

    def forward(self, x):
        return x @ self.W + self.b, x

    def backward(self, cache, gout):
        x = cache
        gW = x.T @ gout
        gb = gout.sum(axis=0)
        return gout @ self.W.T, [gW, gb]


class Conv2d:
    """2-D convolution (cross-correlation) with zero padding.

    Output spatial size is floor((H + 2*pad - kernel) / stride) + 1.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int = 3,
        stride: int = 1,
        pad: int = 1,
        rng: np.random.Generator | None = None,
    ):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_ch * kernel * kernel
        fan_out = out_ch * kernel * kernel
        shape = (out_ch, in_ch * kernel * kernel)
        if rng is None:
            self.W = np.zeros(shape)
        else:
            self.W = glorot_uniform(rng, fan_in, fan_out, shape)
        self.b = np.zeros(out_ch)

    @property
    def params(self):
        return [self.W, self.b]

    def spec(self):
        return {
            "kind": "conv2d",
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }

    def _out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def _im2col(self, xp, out_h, out_w):
        # layout (C*k*k, N*out_h*out_w) so forward/backward are single GEMMs
        n, c, _, _ = xp.shape
        k, s = self.kernel, self.stride
        sn, sc, sh, sw = xp.strides
        cols = np.lib.stride_tricks.as_strided(
            xp,
            shape=(c, k, k, n, out_h, out_w),
            strides=(sc, sh, sw, sn, s * sh, s * sw),
        )
        return np.ascontiguousarray(cols).reshape(c * k * k, n * out_h * out_w)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {c}")
        out_h, out_w = self._out_hw(h, w)
        p = self.pad
        if p:
            xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
            xp[:, :, p : p + h, p : p + w] = x
        else:
            xp = x
        cols = self._im2col(xp, out_h, out_w)
        y = (self.W @ cols).reshape(self.out_ch, n, out_h, out_w).transpose(1, 0, 2, 3)
        y = y + self.b[None, :, None, None]
        return y, (cols, x.shape)

    def backward(self, cache, gout):
        cols, x_shape = cache
        n, _, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.pad
        out_h, out_w = self._out_hw(h, w)
        g = np.ascontiguousarray(gout.transpose(1, 0, 2, 3)).reshape(self.out_ch, -1)
        gW = g @ cols.T
        gb = g.sum(axis=1)
        gcols = (self.W.T @ g).reshape(self.in_ch, k, k, n, out_h, out_w)
        gxp = np.zeros((n, self.in_ch, h + 2 * p, w + 2 * p))
        view = gxp.transpose(1, 0, 2, 3)
        for i in range(k):
            for j in range(k):
                view[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += gcols[:, i, j]
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, [gW, gb]


class Relu:
    params: list = []

    def spec(self):
        return {"kind": "relu"}

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, gout):
        return gout * cache, []


class LeakyRelu:
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    params: list = []

    def spec(self):
        return {"kind": "leaky_relu", "slope": self.slope}

    def forward(self, x):
        return np.where(x > 0, x, self.slope * x), x > 0

    def backward(self, cache, gout):
        return np.where(cache, gout, self.slope * gout), []


class Tanh:
    params: list = []

    def spec(self):
        return {"kind": "tanh"}

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, gout):
        return gout * (1.0 - cache * cache), []


class Sigmoid:
    params: list = []

    def spec(self):
        return {"kind": "sigmoid"}

    def forward(self, x):
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y

    def backward(self, cache, gout):
        return gout * cache * (1.0 - cache), []


class PixelShuffle:
    """Rearranges (N, C*r^2, H, W) into (N, C, H*r, W*r).

    out[n, c, h*r + i, w*r + j] = in[n, c*r^2 + i*r + j, h, w]
    """

    def __init__(self, r: int):
        self.r = r

    params: list = []

    def spec(self):
        return {"kind": "pixel_shuffle", "r": self.r}

    def forward(self, x):
        n, c, h, w = x.shape
        r = self.r
        if c % (r * r) != 0:
            raise ValueError(f"channels {c} not divisible by r^2 = {r * r}")
        co = c // (r * r)
        y = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return y.reshape(n, co, h * r, w * r), (n, c, h, w)

    def backward(self, cache, gout):
        n, c, h, w = cache
        r = self.r
        co = c // (r * r)
        g = gout.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return g.reshape(n, c, h, w), []


class Reshape:
    """Per-sample reshape; the batch dimension is untouched."""

    def __init__(self, shape: tuple):
        self.shape = tuple(shape)

    params: list = []

    def spec(self):
        return {"kind": "reshape", "shape": list(self.shape)}

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, cache, gout):
        return gout.reshape(cache), []


class Residual:
    """y = x + block(x); block input and output shapes must agree."""

    def __init__(self, layers: list):
        self.layers = layers

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def spec(self):
        return {"kind": "residual", "layers": [l.spec() for l in self.layers]}

    def forward(self, x):
        caches = []
        y = x
        for layer in self.layers:
            y, cache = layer.forward(y)
            caches.append(cache)
        if y.shape != x.shape:
            raise ValueError(f"residual block changed shape {x.shape} -> {y.shape}")
        return x + y, caches

    def backward(self, caches, gout):
        g = gout
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, layer_grads = layer.backward(cache, g)
            grads = layer_grads + grads
        return gout + g, grads


_LAYER_KINDS = {
    "dense": lambda s, rng: Dense(s["n_in"], s["n_out"], rng),
    "conv2d": lambda s, rng: Conv2d(s["in_ch"], s["out_ch"], s["kernel"], s["stride"], s["pad"], rng),
    "relu": lambda s, rng: Relu(),
    "leaky_relu": lambda s, rng: LeakyRelu(s["slope"]),
    "tanh": lambda s, rng: Tanh(),
    "sigmoid": lambda s, rng: Sigmoid(),
    "pixel_shuffle": lambda s, rng: PixelShuffle(s["r"]),
    "reshape": lambda s, rng: Reshape(tuple(s["shape"])),
    "residual": lambda s, rng: Residual([layer_from_spec(l, rng) for l in s["layers"]]),
}


def layer_from_spec(spec: dict, rng: np.random.Generator | None = None):
    try:
        build = _LAYER_KINDS[spec["kind"]]
    except KeyError:
        raise ValueError(f"unknown layer kind {spec.get('kind')!r}") from None
    return build(spec, rng)


class Network:
    """An ordered stack of layers with flat parameter access."""

    def __init__(self, layers: list):
        self.layers = layers

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def spec(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    @classmethod
    def from_spec(cls, specs: list[dict], rng: np.random.Generator | None = None):
        return cls([layer_from_spec(s, rng) for s in specs])

    def forward(self, x: np.ndarray):
        caches = []
        y = x
        for layer in self.layers:
            y, cache = layer.forward(y)
            caches.append(cache)
        return y, caches

    def backward(self, caches: list, gout: np.ndarray):
        """Gradients for every parameter (ordered as .params) and the input."""
        g = gout
        grads: list[np.ndarray] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, layer_grads = layer.backward(cache, g)
            grads = layer_grads + grads
        return g, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and moments must align")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Losses: each returns (scalar loss, gradient w.r.t. the first argument)
# ---------------------------------------------------------------------------

_P_EPS = 1e-12


def smoothed_targets(
    is_real: bool, soft_scale: float, shape, rng: np.random.Generator
) -> np.ndarray:
    """Discriminator targets: U[1-s, 1] for real inputs, U[0, s] for fakes."""
    if not 0.0 <= soft_scale < 0.5:
        raise ValueError(f"soft_scale must be in [0, 0.5), got {soft_scale}")
    if is_real:
        return rng.uniform(1.0 - soft_scale, 1.0, size=shape)
    return rng.uniform(0.0, soft_scale, size=shape)


def loss_bce(pred_prob: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy against explicit targets."""
    pred = np.asarray(pred_prob, dtype=np.float64)
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise ValueError("predicted probabilities must lie strictly in (0, 1)")
    p = np.clip(pred, _P_EPS, 1.0 - _P_EPS)
    n = p.size
    loss = float(-np.sum(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)) / n)
    grad = (p - targets) / (p * (1.0 - p)) / n
    return loss, grad


def loss_bce_smoothed(
    pred_prob: np.ndarray, is_real: bool, soft_scale: float, rng: np.random.Generator
):
    """BCE against targets drawn from the smoothed range."""
    targets = smoothed_targets(is_real, soft_scale, np.shape(pred_prob), rng)
    return loss_bce(pred_prob, targets)


def loss_cross_entropy(logits: np.ndarray, class_index):
    """Softmax cross-entropy, log-sum-exp stabilized, mean over the batch.

    ``logits`` is (N, K) and ``class_index`` an int array of length N; a
    single unbatched row with a scalar index is also accepted.
    """
    single = np.ndim(logits) == 1
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    idx = np.atleast_1d(np.asarray(class_index, dtype=np.intp))
    n, k = z.shape
    if np.any(idx < 0) or np.any(idx >= k):
        raise ValueError(f"class index out of range for {k} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), idx].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), idx] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def loss_total_variation(image: np.ndarray):
    """Anisotropic total variation, normalized by the element count.

    Accepts a single 2-D image or a batch (N, C, H, W); batches average the
    per-image value (channels summed). Ties take the zero subgradient.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None, None]
        single = True
    elif img.ndim == 4:
        single = False
    else:
        raise ValueError(f"expected 2-D or 4-D input, got shape {image.shape}")
    n, c, h, w = img.shape
    if h * w < 2:
        raise ValueError("total variation needs at least two pixels")
    denom = c * h * w
    dh = img[:, :, 1:, :] - img[:, :, :-1, :]
    dw = img[:, :, :, 1:] - img[:, :, :, :-1]
    loss = float((np.abs(dh).sum() + np.abs(dw).sum()) / (denom * n))
    grad = np.zeros_like(img)
    sh, sw = np.sign(dh), np.sign(dw)
    grad[:, :, 1:, :] += sh
    grad[:, :, :-1, :] -= sh
    grad[:, :, :, 1:] += sw
    grad[:, :, :, :-1] -= sw
    grad /= denom * n
    return loss, (grad[0, 0] if single else grad)


def loss_mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements."""
    if np.shape(pred) != np.shape(target):
        raise ValueError(f"shape mismatch: {np.shape(pred)} vs {np.shape(target)}")
    diff = np.asarray(pred, dtype=np.float64) - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size
