"""Teacher inference, ranker partitioning, pixel trinarization and the calibration gallery."""
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import IGNORE, NEG, POS
from .errors import ParameterError, StorageError
from .formats import read_frame, read_mask, read_probmap, write_mask, write_probmap
from .model import forward_batch, frame_score

log = logging.getLogger(__name__)

SCORED_FILE = "scored.json"
PSEUDO_FILE = "pseudo.json"


@dataclass(frozen=True)
class ScoredFrame:
    stack_id: str
    index: int
    score: float
    prob_map_ref: str  # relative to the inference output directory

    @property
    def frame_ref(self):
        return (self.stack_id, self.index)


@dataclass(frozen=True)
class RankerConfig:
    percentile_c: float = 10
    k_pos: float = 0.7
    k_neg: float = 0.3

    def validate(self):
        if not 0 <= self.percentile_c <= 100:
            raise ParameterError(f"percentile_c must lie in [0,100], got {self.percentile_c}")
        if not 0 < self.k_neg < self.k_pos < 1:
            raise ParameterError(f"need 0 < k_neg < k_pos < 1, got {self.k_neg}, {self.k_pos}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def positive_count(n, c):
    """``ceil(n * c / 100)`` computed exactly (``c`` taken as its decimal literal)."""
    frac = Fraction(str(c)) * n / 100
    return math.ceil(frac)


def infer_corpus(teacher, corpus, out_dir):
    """Score every corpus frame with the teacher (no augmentation) and persist the maps."""
    out_dir = Path(out_dir)
    scored = []
    for entry in corpus.stacks:
        frames = []
        for f in entry.frame_files:
            path = corpus.root / f
            if not path.is_file():
                raise StorageError(f"unreadable frame file {path}")
            frames.append(read_frame(path))
        probs = forward_batch(teacher, np.stack(frames))
        sdir = out_dir / "probs" / entry.stack_id
        os.makedirs(sdir, exist_ok=True)
        for i, p in enumerate(probs):
            rel = f"probs/{entry.stack_id}/prob_{i:03d}.nsp"
            write_probmap(out_dir / rel, p)
            scored.append(ScoredFrame(entry.stack_id, i, frame_score(p), rel))
    write_scored(scored, corpus, out_dir)
    return scored


def write_scored(scored, corpus, out_dir):
    doc = {
        "corpus": str(Path(corpus.path).resolve()) if corpus.path else "",
        "dataset_id": corpus.dataset_id,
        "frames": [asdict(s) for s in scored],
    }
    with open(Path(out_dir) / SCORED_FILE, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_scored(scored_dir):
    """Return ``(scored_frames, corpus_manifest_path)`` from an inference directory."""
    path = Path(scored_dir) / SCORED_FILE
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    frames = [ScoredFrame(d["stack_id"], int(d["index"]), float(d["score"]), d["prob_map_ref"])
              for d in doc["frames"]]
    return frames, doc["corpus"]


def rank(scored):
    """Descending score; ties broken by (stack_id, frame index) ascending."""
    return sorted(scored, key=lambda s: (-s.score, s.stack_id, s.index))


def rank_and_threshold(scored, cfg):
    """Split frames into (positive, negative): the top ``ceil(N*C/100)`` are positive."""
    if not scored:
        raise ParameterError("rank_and_threshold needs at least one scored frame")
    cfg.validate()
    ordered = rank(scored)
    k = positive_count(len(ordered), cfg.percentile_c)
    return ordered[:k], ordered[k:]


def pixel_pseudolabels(prob_map, is_positive, cfg):
    prob_map = np.asarray(prob_map)
    if not is_positive:
        return np.full(prob_map.shape, NEG, dtype=np.uint8)
    labels = np.full(prob_map.shape, IGNORE, dtype=np.uint8)
    labels[prob_map > cfg.k_pos] = POS
    labels[prob_map < cfg.k_neg] = NEG
    return labels


@dataclass
class PseudoEntry:
    stack_id: str
    index: int
    positive: bool
    frame_file: str  # relative to the corpus manifest directory
    label_file: str  # relative to the pseudo-label directory


@dataclass
class PseudoLabelSet:
    dataset_id: str
    entries: list
    ranker: RankerConfig
    teacher_id: str
    corpus_root: Path
    root: Path
    use_ranker: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def load_pairs(self):
        frames = [read_frame(self.corpus_root / e.frame_file) for e in self.entries]
        masks = [read_mask(self.root / e.label_file) for e in self.entries]
        return frames, masks

    def to_dict(self):
        return {
            "dataset_id": self.dataset_id,
            "teacher_id": self.teacher_id,
            "ranker": self.ranker.to_dict(),
            "use_ranker": self.use_ranker,
            "corpus_root": str(Path(self.corpus_root).resolve()),
            "n_positive": sum(e.positive for e in self.entries),
            "meta": self.meta,
            "entries": [asdict(e) for e in self.entries],
        }

    def write(self):
        with open(self.root / PSEUDO_FILE, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def load_pseudo_set(path):
    path = Path(path)
    if path.is_dir():
        path = path / PSEUDO_FILE
    with open(path) as fh:
        d = json.load(fh)
    entries = [PseudoEntry(**e) for e in d["entries"]]
    return PseudoLabelSet(d["dataset_id"], entries, RankerConfig.from_dict(d["ranker"]),
                          d["teacher_id"], Path(d["corpus_root"]), path.parent,
                          d.get("use_ranker", True), d.get("meta", {}))


def build_pseudo_labels(scored, corpus, cfg, out_dir, scored_dir, teacher_id="", use_ranker=True):
    """Partition, trinarize and write label maps for every scored frame.

    With ``use_ranker=False`` every frame is trinarized as if it were positive
    (the no-ranker ablation).
    """
    out_dir = Path(out_dir)
    scored_dir = Path(scored_dir)
    if use_ranker:
        positive, _ = rank_and_threshold(scored, cfg)
        pos_refs = {s.frame_ref for s in positive}
    else:
        cfg.validate()
        pos_refs = {s.frame_ref for s in scored}
    files = {e.stack_id: e.frame_files for e in corpus.stacks}
    entries = []
    for s in sorted(scored, key=lambda s: (s.stack_id, s.index)):
        is_pos = s.frame_ref in pos_refs
        labels = pixel_pseudolabels(read_probmap(scored_dir / s.prob_map_ref), is_pos, cfg)
        rel = f"labels/{s.stack_id}/label_{s.index:03d}.nsm"
        os.makedirs((out_dir / rel).parent, exist_ok=True)
        write_mask(out_dir / rel, labels)
        entries.append(PseudoEntry(s.stack_id, s.index, is_pos, files[s.stack_id][s.index], rel))
    pset = PseudoLabelSet(corpus.dataset_id, entries, cfg, teacher_id, corpus.root, out_dir, use_ranker)
    pset.write()
    return pset


# -- calibration gallery ---------------------------------------------------

TILE_GAP = 2
CONTOUR_RGB = (0, 255, 0)
ABOVE_RGB = (255, 64, 64)
BELOW_RGB = (64, 128, 255)


def gallery_selection(ranked, c, n):
    """The ``n`` consecutive ranks that straddle the C-th percentile boundary."""
    total = len(ranked)
    if total <= n:
        return list(range(total))
    boundary = positive_count(total, c)
    start = min(max(boundary - n // 2, 0), total - n)
    return list(range(start, start + n))


def _contour(region):
    inner = region.copy()
    inner[1:, :] &= region[:-1, :]
    inner[:-1, :] &= region[1:, :]
    inner[:, 1:] &= region[:, :-1]
    inner[:, :-1] &= region[:, 1:]
    inner[0, :] = inner[-1, :] = False
    inner[:, 0] = inner[:, -1] = False
    return region & ~inner


def render_tile(frame, probs, k_pos, above):
    gray = (np.clip(frame, 0, 1) * 255).round().astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[_contour(probs > k_pos)] = CONTOUR_RGB
    edge = ABOVE_RGB if above else BELOW_RGB
    rgb[0, :] = rgb[-1, :] = edge
    rgb[:, 0] = rgb[:, -1] = edge
    return rgb


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)


def render_gallery(scored, corpus, thresholds, n_per_threshold, out_dir, scored_dir, cfg=None):
    """One ``gallery_C<percent>.ppm`` grid per threshold; returns the written paths.

    Tile borders are red above the cutoff and blue below it; the green
    contour outlines pixels with probability above ``k_pos``.
    """
    cfg = cfg or RankerConfig()
    thresholds = list(thresholds)
    for c in thresholds:
        if not 0 <= c <= 100:
            raise ParameterError(f"threshold {c} outside [0, 100]")
    if not thresholds:
        return []
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    ranked = rank(scored)
    if len(ranked) < n_per_threshold:
        msg = f"corpus has {len(ranked)} frames < n_per_threshold={n_per_threshold}; showing all"
        warnings.warn(msg)
        log.warning(msg)
    files = {e.stack_id: e.frame_files for e in corpus.stacks}
    cache = {}

    def tile(rank_idx, above):
        s = ranked[rank_idx]
        if s.frame_ref not in cache:
            frame = read_frame(corpus.root / files[s.stack_id][s.index])
            probs = read_probmap(Path(scored_dir) / s.prob_map_ref)
            cache[s.frame_ref] = (frame, probs)
        frame, probs = cache[s.frame_ref]
        return render_tile(frame, probs, cfg.k_pos, above)

    paths = []
    for c in thresholds:
        picks = gallery_selection(ranked, c, n_per_threshold)
        boundary = positive_count(len(ranked), c)
        tiles = [tile(r, r < boundary) for r in picks]
        th = max(t.shape[0] for t in tiles)
        tw = max(t.shape[1] for t in tiles)
        ncol = math.ceil(math.sqrt(len(tiles)))
        nrow = math.ceil(len(tiles) / ncol)
        grid = np.zeros((nrow * (th + TILE_GAP) + TILE_GAP, ncol * (tw + TILE_GAP) + TILE_GAP, 3),
                        dtype=np.uint8)
        for k, t in enumerate(tiles):
            y = TILE_GAP + (k // ncol) * (th + TILE_GAP)
            x = TILE_GAP + (k % ncol) * (tw + TILE_GAP)
            grid[y:y + t.shape[0], x:x + t.shape[1]] = t
        path = out_dir / f"gallery_C{_fmt_percent(c)}.ppm"
        write_ppm(path, grid)
        paths.append(path)
    return paths


def _fmt_percent(c):
    return str(int(c)) if float(c).is_integer() else str(c)
