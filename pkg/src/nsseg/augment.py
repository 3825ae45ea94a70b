"""Student-noising augmentations: contrast transforms and head size/aspect jitter.

All functions are pure; inputs are never modified in place.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

POWER_LAW = "power_law"
LOG_CORRECTION = "log"
NO_CONTRAST = "none"
CONTRAST_KINDS = (POWER_LAW, LOG_CORRECTION, NO_CONTRAST)

GAMMA_RANGE = (0.85, 1.1)
GAIN_RANGE = (0.7, 1.1)
JITTER_RANGE = (-0.075, 0.075)

# contrast policies for the ablation grid: which kinds are drawn (uniformly)
CONTRAST_POLICIES = {
    "none": (NO_CONTRAST,),
    "power_law": (POWER_LAW,),
    "log": (LOG_CORRECTION,),
    "all": CONTRAST_KINDS,
}


@dataclass(frozen=True)
class AugmentationChoice:
    contrast_kind: str
    gamma: float
    gain: float
    alpha: float
    beta: float


def power_law(frame, gamma):
    if not gamma > 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    frame = np.asarray(frame)
    return np.clip(np.power(frame, frame.dtype.type(gamma)), 0.0, 1.0)


def log_correction(frame, gain):
    """``gain * ln(1 + I)``, clamped to [0, 1]."""
    if not gain > 0:
        raise ParameterError(f"gain must be > 0, got {gain}")
    frame = np.asarray(frame)
    return np.clip(frame.dtype.type(gain) * np.log1p(frame), 0.0, 1.0)


def _round_half_away(x):
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def jittered_dims(h0, w0, alpha, beta):
    if abs(alpha) >= 1 or abs(beta) >= 1:
        raise ParameterError(f"|alpha| and |beta| must be < 1, got {alpha}, {beta}")
    h = _round_half_away(h0 * (1.0 - alpha))
    w = _round_half_away(w0 * (1.0 - beta))
    if h < 1 or w < 1:
        raise ParameterError(f"jittered size {h}x{w} is empty")
    return h, w


def _source_coords(n_out, n_in):
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(img, h, w):
    img = np.asarray(img)
    h0, w0 = img.shape
    if (h, w) == (h0, w0):
        return img.copy()
    ys = np.clip(_source_coords(h, h0), 0, h0 - 1)
    xs = np.clip(_source_coords(w, w0), 0, w0 - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h0 - 1)
    x1 = np.minimum(x0 + 1, w0 - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


def resize_nearest(labels, h, w):
    labels = np.asarray(labels)
    h0, w0 = labels.shape
    if (h, w) == (h0, w0):
        return labels.copy()
    ys = np.minimum(np.floor((np.arange(h) + 0.5) * h0 / h).astype(int), h0 - 1)
    xs = np.minimum(np.floor((np.arange(w) + 0.5) * w0 / w).astype(int), w0 - 1)
    return labels[ys][:, xs]


def scale_jitter(frame, mask, alpha, beta):
    """Resize to ``round(h0*(1-alpha)) x round(w0*(1-beta))``.

    The frame is resampled bilinearly, the mask by nearest neighbour so its
    label alphabet is preserved. Zero jitter is an exact pass-through.
    """
    h0, w0 = np.shape(frame)
    if np.shape(mask) != (h0, w0):
        raise ParameterError("frame and mask dimensions differ")
    h, w = jittered_dims(h0, w0, alpha, beta)
    return resize_bilinear(frame, h, w), resize_nearest(mask, h, w)


def sample_augmentation(rng, policy="all"):
    """Draw one augmentation; every parameter is drawn on every call."""
    kinds = CONTRAST_POLICIES[policy]
    k = int(rng.integers(len(kinds)))
    gamma = rng.uniform(*GAMMA_RANGE)
    gain = rng.uniform(*GAIN_RANGE)
    alpha = rng.uniform(*JITTER_RANGE)
    beta = rng.uniform(*JITTER_RANGE)
    return AugmentationChoice(kinds[k], float(gamma), float(gain), float(alpha), float(beta))


def apply_contrast(frame, choice):
    if choice.contrast_kind == POWER_LAW:
        return power_law(frame, choice.gamma)
    if choice.contrast_kind == LOG_CORRECTION:
        return log_correction(frame, choice.gain)
    return np.asarray(frame).copy()


def apply_augmentation(frame, mask, choice, jitter=True):
    if jitter:
        frame, mask = scale_jitter(frame, mask, choice.alpha, choice.beta)
    return apply_contrast(frame, choice), mask
