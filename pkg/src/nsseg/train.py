"""Minibatch SGD training for TinyFCN on labeled + pseudo-labeled crops.

Randomness is drawn from per-step streams (``rng.stream(seed, name, step)``),
so two runs that differ only in their pseudo-labels still see the same
augmentation draws at each step index.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import NEG, POS
from .augment import CONTRAST_POLICIES, apply_augmentation, sample_augmentation
from .errors import ParameterError
from .model import frame_bce_loss, masked_bce_loss, sgd_step, sigmoid
from .rng import stream

LABELED = "labeled"
PSEUDO = "pseudo"
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    crop_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    mix_ratio_labeled: float = 0.6
    seed: int = 0
    steps_per_epoch: int = 40  # 0 = one pass over the labeled frames
    contrast: str = "all"
    jitter: bool = True
    pos_fraction: float = 0.5
    lr_schedule: str = "cosine"  # or "constant"

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.crop_size < 1:
            raise ParameterError("epochs >= 0, batch_size >= 1 and crop_size >= 1 required")
        if not 0.0 <= self.mix_ratio_labeled <= 1.0:
            raise ParameterError(f"mix_ratio_labeled must lie in [0,1], got {self.mix_ratio_labeled}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.contrast not in CONTRAST_POLICIES:
            raise ParameterError(f"unknown contrast policy {self.contrast!r}")
        if not 0.0 <= self.pos_fraction <= 1.0:
            raise ParameterError("pos_fraction must lie in [0,1]")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ParameterError(f"unknown lr_schedule {self.lr_schedule!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d).validate()


def learning_rate(cfg, step, total):
    """Rate for ``step`` of ``total``; cosine decays from the base rate towards 0."""
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total))


def round_half_up(x):
    return int(math.floor(x + 0.5))


class TrainingSet:
    """In-memory (frame, label map) pairs plus the indices of frames with POS pixels."""

    def __init__(self, frames, masks):
        if len(frames) != len(masks):
            raise ParameterError("frames and masks differ in length")
        self.frames = [np.asarray(f, dtype=np.float32) for f in frames]
        self.masks = [np.asarray(m, dtype=np.uint8) for m in masks]
        self.positive = [i for i, m in enumerate(self.masks) if (m == POS).any()]

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_manifest(cls, manifest):
        rows = manifest.load_frames()
        return cls([r[2] for r in rows], [r[3] for r in rows])

    @classmethod
    def from_pseudo(cls, pseudo_set):
        frames, masks = pseudo_set.load_pairs()
        return cls(frames, masks)


def _crop(frame, mask, size, rng, anchor):
    h, w = frame.shape
    if h < size or w < size:
        ph, pw = max(size - h, 0), max(size - w, 0)
        frame = np.pad(frame, ((0, ph), (0, pw)))
        mask = np.pad(mask, ((0, ph), (0, pw)), constant_values=NEG)
        h, w = frame.shape
    if anchor is None:
        top = int(rng.integers(h - size + 1))
        left = int(rng.integers(w - size + 1))
    else:
        py, px = anchor
        top = int(rng.integers(max(0, py - size + 1), min(py, h - size) + 1))
        left = int(rng.integers(max(0, px - size + 1), min(px, w - size) + 1))
    return frame[top:top + size, left:left + size], mask[top:top + size, left:left + size]


class BatchSampler:
    """Builds augmented, cropped minibatches mixing labeled and pseudo-labeled data.

    Each batch holds ``round(B * mix_ratio_labeled)`` labeled crops followed by
    pseudo-labeled crops; without a pseudo set every crop is labeled.
    """

    def __init__(self, labeled, pseudo, cfg):
        if len(labeled) == 0:
            raise ParameterError("labeled set is empty")
        self.labeled = labeled
        self.pseudo = pseudo if pseudo is not None and len(pseudo) > 0 else None
        self.cfg = cfg
        if self.pseudo is None:
            self.n_labeled = cfg.batch_size
        else:
            self.n_labeled = round_half_up(cfg.batch_size * cfg.mix_ratio_labeled)

    def sources(self):
        return [LABELED] * self.n_labeled + [PSEUDO] * (self.cfg.batch_size - self.n_labeled)

    def draw(self, step, n_slots=None):
        """Return ``(x, y, sources)`` for minibatch ``step``; x is (B, 1, c, c).

        ``n_slots`` truncates the batch to its first slots (used by the frame oracle).
        """
        cfg = self.cfg
        crop_rng = stream(cfg.seed, "crop", step)
        aug_rng = stream(cfg.seed, "augment", step)
        xs, ys = [], []
        srcs = self.sources()[:n_slots]
        for src in srcs:
            data = self.labeled if src == LABELED else self.pseudo
            choice = sample_augmentation(aug_rng, cfg.contrast)
            want_pos = crop_rng.random() < cfg.pos_fraction and data.positive
            if want_pos:
                idx = data.positive[int(crop_rng.integers(len(data.positive)))]
            else:
                idx = int(crop_rng.integers(len(data)))
            frame, mask = apply_augmentation(data.frames[idx], data.masks[idx], choice, cfg.jitter)
            anchor = None
            if want_pos:
                pos = np.argwhere(mask == POS)
                if len(pos):
                    anchor = tuple(pos[int(crop_rng.integers(len(pos)))])
            fc, mc = _crop(frame, mask, cfg.crop_size, crop_rng, anchor)
            xs.append(fc)
            ys.append(mc)
        return np.stack(xs)[:, None], np.stack(ys), srcs


def steps_per_epoch(cfg, n_labeled_frames, n_labeled_per_batch):
    if cfg.steps_per_epoch:
        return cfg.steps_per_epoch
    return max(1, math.ceil(n_labeled_frames / max(n_labeled_per_batch, 1)))


def train(model, labeled, pseudo, cfg, on_step=None):
    """Train ``model`` (left untouched) and return the trained copy.

    ``labeled`` and ``pseudo`` are TrainingSets (``pseudo`` may be None).
    ``on_step(step, loss, sources)`` is called after every update.
    """
    cfg.validate()
    sampler = BatchSampler(labeled, pseudo, cfg)
    total = cfg.epochs * steps_per_epoch(cfg, len(labeled), sampler.n_labeled)
    velocity = None
    for step in range(total):
        x, y, srcs = sampler.draw(step)
        logits, cache = model.forward_train(x)
        loss, grad = masked_bce_loss(sigmoid(logits), y)
        grads = model.backward(cache, grad)
        model, velocity = sgd_step(model, grads, learning_rate(cfg, step, total), cfg.momentum, velocity)
        if on_step is not None:
            on_step(step, loss, srcs)
    return model


def train_frame_oracle(model, labeled, corpus_frames, corpus_labels, cfg, on_step=None):
    """Train with pixel labels on ``labeled`` and frame-level labels on the corpus.

    Corpus frames are used whole (a crop could cut the lesion out and
    invalidate the frame label) after the same augmentation as pixel crops.
    The batch loss is the sample-weighted mean of the pixel and frame losses.
    """
    cfg.validate()
    if len(corpus_frames) != len(corpus_labels):
        raise ParameterError("corpus frames and labels differ in length")
    if len(corpus_frames) == 0:
        return train(model, labeled, None, cfg, on_step)
    sampler = BatchSampler(labeled, None, cfg)
    batch = cfg.batch_size
    n_lab = round_half_up(batch * cfg.mix_ratio_labeled)
    n_frames = batch - n_lab
    total = cfg.epochs * steps_per_epoch(cfg, len(labeled), n_lab)
    velocity = None
    for step in range(total):
        grads = None
        loss = 0.0
        if n_lab:
            x, y, _ = sampler.draw(step, n_lab)
            logits, cache = model.forward_train(x)
            l_pix, g = masked_bce_loss(sigmoid(logits), y)
            loss += l_pix * n_lab / batch
            grads = [gi * (n_lab / batch) for gi in model.backward(cache, g)]
        frame_rng = stream(cfg.seed, "oracle-frames", step)
        aug_rng = stream(cfg.seed, "oracle-augment", step)
        for _ in range(n_frames):
            idx = int(frame_rng.integers(len(corpus_frames)))
            choice = sample_augmentation(aug_rng, cfg.contrast)
            frame = np.asarray(corpus_frames[idx], dtype=np.float32)
            f, _ = apply_augmentation(frame, np.zeros(frame.shape, np.uint8), choice, cfg.jitter)
            logits, cache = model.forward_train(f[None, None])
            l_frame, g = frame_bce_loss(sigmoid(logits), corpus_labels[idx])
            loss += l_frame / batch
            gi = [v / batch for v in model.backward(cache, g)]
            grads = gi if grads is None else [a + b for a, b in zip(grads, gi)]
        model, velocity = sgd_step(model, grads, learning_rate(cfg, step, total), cfg.momentum, velocity)
        if on_step is not None:
            on_step(step, loss, [LABELED] * n_lab + ["frame"] * n_frames)
    return model
