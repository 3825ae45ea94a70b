"""A small fully-convolutional pixel classifier with hand-written backprop.

Layers are 'same'-padded 2-D convolutions with a leaky rectifier between
them and a sigmoid on the single output channel. Public entry points take NCHW batches; internally
activations are kept NHWC so convolutions reduce to one matrix product.
"""
import math

import numpy as np

from . import IGNORE, POS
from .errors import NumericError, ParameterError

DEFAULT_CHANNELS = (1, 8, 16, 16, 1)
LEAKY_SLOPE = 0.01
PROB_EPS = 1e-7


class TinyFCN:
    def __init__(self, weights, biases, slope=LEAKY_SLOPE):
        if len(weights) != len(biases) or not weights:
            raise ParameterError("need one bias vector per conv layer")
        if weights[-1].shape[0] != 1:
            raise ParameterError("final layer must have exactly one output channel")
        for w, b in zip(weights, biases):
            if w.ndim != 4 or w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
                raise ParameterError(f"kernels must be 4-D with odd spatial size, got {w.shape}")
            if b.shape != (w.shape[0],):
                raise ParameterError("bias length must equal output channels")
        self.weights = list(weights)
        self.biases = list(biases)
        self.slope = float(slope)

    @classmethod
    def zeros(cls, channels=DEFAULT_CHANNELS, kernel=3, dtype=np.float32):
        ws = [np.zeros((o, i, kernel, kernel), dtype) for i, o in zip(channels[:-1], channels[1:])]
        bs = [np.zeros(o, dtype) for o in channels[1:]]
        return cls(ws, bs)

    @classmethod
    def init(cls, seed, channels=DEFAULT_CHANNELS, kernel=3, dtype=np.float32):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        model = cls.zeros(channels, kernel, dtype)
        for w in model.weights:
            o, i, kh, kw = w.shape
            limit = math.sqrt(6.0 / (i * kh * kw + o * kh * kw))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return model

    @property
    def channels(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def kernel_sizes(self):
        return tuple(w.shape[2:] for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_parameters(self, params):
        return TinyFCN(list(params[0::2]), list(params[1::2]), self.slope)

    def copy(self):
        return self.with_parameters([p.copy() for p in self.parameters()])

    def logits(self, x):
        return self.forward_train(x)[0]

    def forward_train(self, x):
        """Forward pass on a (N, C, H, W) batch; returns logits (N, H, W) and a cache."""
        x = np.asarray(x, dtype=self.dtype)
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # NHWC internally
        cache = []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z, cols = conv2d_same(h, w, b)
            cache.append((cols, z))
            h = z if k == last else leaky_relu(z, self.slope)
        return h[..., 0], cache

    def backward(self, cache, grad_logits):
        """Parameter gradients given d(loss)/d(logits) of shape (N, H, W)."""
        g = np.asarray(grad_logits, dtype=self.dtype)[..., None]
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            cols, z = cache[k]
            if k != len(self.weights) - 1:
                g = g * np.where(z > 0, 1.0, self.slope).astype(self.dtype)
            dw, db, dx = conv2d_same_backward(g, cols, self.weights[k], need_input=k > 0)
            grads[2 * k] = dw
            grads[2 * k + 1] = db
            g = dx
        return grads


def leaky_relu(z, slope):
    return np.where(z > 0, z, z * z.dtype.type(slope))


def sigmoid(z):
    z = np.asarray(z)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def im2col(x, kh, kw):
    """(N, H, W, C) -> (N*H*W, C*kh*kw) patches of the zero-padded input."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((n, h, w, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[..., i, j] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(n * h * w, c * kh * kw)


def conv2d_same(x, w, b):
    """Stride-1 cross-correlation with zero 'same' padding on NHWC input.

    Returns the NHWC output and the im2col matrix (kept for the backward pass).
    """
    n, h, wd, _ = x.shape
    o, c, kh, kw = w.shape
    cols = im2col(x, kh, kw)
    out = cols @ w.reshape(o, c * kh * kw).T + b
    return out.reshape(n, h, wd, o), cols


def conv2d_same_backward(g, cols, w, need_input=True):
    o, c, kh, kw = w.shape
    g2 = g.reshape(-1, o)
    dw = (g2.T @ cols).reshape(w.shape)
    db = g2.sum(axis=0)
    dx = None
    if need_input:
        w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv2d_same(g, w_flip, np.zeros(c, w.dtype))
    return dw, db, dx


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def forward(model, frame):
    """Per-pixel lesion probability for one 2-D frame."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ParameterError(f"expected a 2-D frame, got shape {frame.shape}")
    logits = model.logits(frame[None, None])
    _check_finite(logits, "logits")
    return sigmoid(logits[0])


def forward_batch(model, frames):
    logits = model.logits(np.asarray(frames)[:, None])
    _check_finite(logits, "logits")
    return sigmoid(logits)


def masked_bce_loss(probs, labels):
    """Mean binary cross-entropy over non-IGNORE pixels.

    Returns ``(loss, grad)`` where ``grad`` is the derivative with respect to
    the logits that produced ``probs``: ``(p - y) / n_valid`` on valid pixels
    and exactly zero on IGNORE pixels.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ParameterError(f"shape mismatch {probs.shape} vs {labels.shape}")
    valid = labels != IGNORE
    n = int(valid.sum())
    grad = np.zeros(probs.shape, dtype=probs.dtype)
    if n == 0:
        return 0.0, grad
    y = (labels == POS).astype(np.float64)
    p = np.clip(probs.astype(np.float64), PROB_EPS, 1.0 - PROB_EPS)
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    loss = float(terms[valid].sum() / n)
    grad[valid] = ((probs.astype(np.float64) - y) / n)[valid]
    return loss, grad


def frame_bce_loss(probs, label):
    """BCE between a frame's max-pixel score and its binary label.

    The gradient with respect to the logits is non-zero only at the arg-max pixel.
    """
    probs = np.asarray(probs)
    flat = int(np.argmax(probs))
    p_raw = float(probs.flat[flat])
    p = min(max(p_raw, PROB_EPS), 1.0 - PROB_EPS)
    y = 1.0 if label else 0.0
    loss = -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    grad = np.zeros(probs.shape, dtype=probs.dtype)
    grad.flat[flat] = p_raw - y
    return loss, grad


def sgd_step(model, grads, lr, momentum, velocity=None):
    """Classic momentum SGD. Returns ``(new_model, new_velocity)``; inputs are untouched."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ParameterError("gradient list does not match parameters")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        _check_finite(g, "gradients")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    dt = model.dtype.type
    new_v = [dt(momentum) * v - dt(lr) * g.astype(p.dtype) for v, g, p in zip(velocity, grads, params)]
    new_p = [p + v for p, v in zip(params, new_v)]
    return model.with_parameters(new_p), new_v


def frame_score(probs):
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ParameterError("frame_score of an empty map")
    return float(probs.max())


def stack_score(frame_scores):
    if len(frame_scores) == 0:
        raise ParameterError("stack_score of an empty stack")
    return float(max(frame_scores))
