"""Ranking metrics (retrieval AP, Mann-Whitney ROC-AUC) and model evaluation."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import IGNORE, POS
from .errors import UndefinedMetricError
from .model import forward_batch, frame_score, stack_score


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores, labels


def average_precision(scores, labels):
    """Mean over positives of precision at the positive's rank.

    Items are sorted by descending score; inside a group of tied scores the
    negatives are ranked first, so ties never help.
    """
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    # lexsort: last key is primary
    order = np.lexsort((labels, -scores))
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def roc_auc(scores, labels):
    """Fraction of (positive, negative) pairs ordered correctly; ties count half."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both positive and negative items")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    pixel_ap: float
    frame_ap: float
    stack_ap: float
    stack_roc_auc: float
    counts: dict = field(default_factory=dict)
    model_id: str = ""
    dataset_id: str = ""
    pixel_pooling: str = "global"

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _level(name, fn, scores, labels):
    try:
        return fn(scores, labels)
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"{name}: {exc}") from exc


def score_dataset(model, manifest):
    """Probability maps for every frame, grouped per stack: list of (entry, [(probs, mask)])."""
    out = []
    for entry, stack in zip(manifest.stacks, manifest.iter_stacks()):
        frames = [f for f, _ in stack.frames]
        probs = forward_batch(model, np.stack(frames))
        out.append((entry, [(p, m) for p, (_, m) in zip(probs, stack.frames)]))
    return out


def report_from_maps(per_stack, model_id="", dataset_id=""):
    """Build a MetricsReport from ``[(stack_positive, [(probs, mask), ...]), ...]``."""
    pix_s, pix_y, fr_s, fr_y, st_s, st_y = [], [], [], [], [], []
    for positive, maps in per_stack:
        scores = []
        for probs, mask in maps:
            keep = mask != IGNORE
            pix_s.append(probs[keep].ravel())
            pix_y.append((mask[keep] == POS).ravel())
            s = frame_score(probs)
            scores.append(s)
            fr_s.append(s)
            fr_y.append(bool((mask == POS).any()))
        st_s.append(stack_score(scores))
        st_y.append(bool(positive))
    pix_s = np.concatenate(pix_s)
    pix_y = np.concatenate(pix_y)
    counts = {
        "pixels": int(pix_s.size),
        "positive_pixels": int(pix_y.sum()),
        "frames": len(fr_s),
        "positive_frames": int(sum(fr_y)),
        "stacks": len(st_s),
        "positive_stacks": int(sum(st_y)),
    }
    return MetricsReport(
        pixel_ap=_level("pixel", average_precision, pix_s, pix_y),
        frame_ap=_level("frame", average_precision, fr_s, fr_y),
        stack_ap=_level("stack", average_precision, st_s, st_y),
        stack_roc_auc=_level("stack", roc_auc, st_s, st_y),
        counts=counts,
        model_id=model_id,
        dataset_id=dataset_id,
    )


def evaluate_model(model, manifest, model_id=""):
    scored = score_dataset(model, manifest)
    per_stack = [(entry.positive, maps) for entry, maps in scored]
    return report_from_maps(per_stack, model_id=model_id, dataset_id=manifest.dataset_id)
