"""Deterministic synthetic head-CT-like phantoms with controllable domain shift.

A frame is an elliptical "head" (bright skull rim around soft-tissue texture)
on a dark background. Lesions are isotropic Gaussian blobs whose half-maximum
radius is drawn from [2, 8] px; a pixel is POS iff some blob contributes more
than half its own peak there, which is exactly the disc of that radius.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import NEG, POS
from .errors import ParameterError, StorageError
from .formats import read_frame, read_mask, write_frame, write_mask
from .rng import stack_seed

LESION_RADIUS = (2.0, 8.0)
MAX_LESIONS = 2
SKULL_WIDTH = 2.0
SKULL_LEVEL = 0.85
TISSUE_LEVEL = 0.40


@dataclass(frozen=True)
class DomainProfile:
    domain_id: str = "source"
    noise_sigma: float = 0.02
    contrast_bias: float = 1.0
    head_scale: float = 0.38
    lesion_rate: float = 0.2
    lesion_brightness: float = 0.25
    frame_dims: tuple = (48, 48)
    frames_per_stack: int = 4
    # non-lesion bright streaks (scanner artifacts); never labeled POS
    artifact_rate: float = 0.0
    artifact_brightness: float = 0.3

    def validate(self):
        h, w = self.frame_dims
        if h < 8 or w < 8:
            raise ParameterError(f"frame_dims must be >= 8x8, got {self.frame_dims}")
        if not 0.0 <= self.lesion_rate <= 1.0:
            raise ParameterError(f"lesion_rate must lie in [0,1], got {self.lesion_rate}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 < self.head_scale <= 0.5:
            raise ParameterError(f"head_scale must lie in (0, 0.5], got {self.head_scale}")
        if self.contrast_bias <= 0:
            raise ParameterError(f"contrast_bias must be > 0, got {self.contrast_bias}")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise ParameterError(f"artifact_rate must lie in [0,1], got {self.artifact_rate}")
        if self.frames_per_stack < 1:
            raise ParameterError("frames_per_stack must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["frame_dims"] = list(self.frame_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "frame_dims" in d:
            d["frame_dims"] = tuple(int(v) for v in d["frame_dims"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**d).validate()


def load_profile(path):
    with open(path) as fh:
        return DomainProfile.from_dict(json.load(fh))


@dataclass
class Stack:
    stack_id: str
    frames: list  # of (frame float32 HxW, mask uint8 HxW)
    domain_id: str = ""

    @property
    def positive(self):
        return any(bool((m == POS).any()) for _, m in self.frames)


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def _texture(rng, yy, xx, h, w):
    tex = np.zeros_like(yy)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        tex += np.cos(2 * np.pi * fy * yy / h + py) * np.cos(2 * np.pi * fx * xx / w + px)
    return 0.04 * tex / 3.0


def _streak(yy, xx, ellipse, theta, u_long, u_short, u_amp, u, v, brightness):
    cy, cx, iry, irx = ellipse
    theta = np.pi * theta
    s_long = 2.5 + 3.0 * u_long
    s_short = 1.0 + 1.0 * u_short
    amp = brightness * (0.8 + 0.4 * u_amp)
    rho, phi = math.sqrt(u) * 0.7, 2 * np.pi * v
    sy, sx = cy + rho * iry * math.sin(phi), cx + rho * irx * math.cos(phi)
    dy, dx = yy - sy, xx - sx
    a = dy * math.cos(theta) - dx * math.sin(theta)
    b = dy * math.sin(theta) + dx * math.cos(theta)
    return amp * np.exp(-0.5 * (a / s_long) ** 2 - 0.5 * (b / s_short) ** 2)


def _render_frame(rng, profile, geom, yy, xx):
    h, w = profile.frame_dims
    cy, cx, ry, rx = geom
    r2 = _ellipse(yy, xx, cy, cx, ry, rx)
    head = r2 <= 1.0
    iry, irx = max(ry - SKULL_WIDTH, 0.5), max(rx - SKULL_WIDTH, 0.5)
    brain = _ellipse(yy, xx, cy, cx, iry, irx) <= 1.0

    img = np.zeros((h, w))
    img[head] = SKULL_LEVEL
    img[brain] = TISSUE_LEVEL + _texture(rng, yy, xx, h, w)[brain]

    mask = np.zeros((h, w), dtype=bool)
    has_lesion = rng.random() < profile.lesion_rate
    n_lesions = int(rng.integers(1, MAX_LESIONS + 1)) if has_lesion else 0
    for _ in range(n_lesions):
        radius = rng.uniform(*LESION_RADIUS)
        amp = profile.lesion_brightness * rng.uniform(0.8, 1.2)
        theta = rng.uniform(0, 2 * np.pi)
        rho = math.sqrt(rng.random())
        my, mx = iry - radius - 1.0, irx - radius - 1.0
        if my <= 0 or mx <= 0:
            ly, lx = cy, cx
        else:
            ly, lx = cy + rho * my * math.sin(theta), cx + rho * mx * math.cos(theta)
        d2 = (yy - ly) ** 2 + (xx - lx) ** 2
        contrib = amp * np.exp(-math.log(2.0) * d2 / radius**2)
        img += np.where(brain, contrib, 0.0)
        mask |= brain & (contrib > 0.5 * amp)

    # artifacts are drawn on every frame so the stream layout does not depend on the rate
    has_artifact = rng.random() < profile.artifact_rate
    a_theta, a_long, a_short, a_amp, a_u, a_v = rng.random(6)
    if has_artifact:
        img += np.where(brain, _streak(yy, xx, (cy, cx, iry, irx), a_theta, a_long, a_short,
                                        a_amp, a_u, a_v, profile.artifact_brightness), 0.0)

    img = np.clip(img, 0.0, 1.0) ** profile.contrast_bias
    if profile.noise_sigma > 0:
        img = img + rng.normal(0.0, profile.noise_sigma, size=img.shape)
    else:
        rng.normal(size=img.shape)  # keep stream consumption independent of sigma
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return img, np.where(mask, POS, NEG).astype(np.uint8)


def generate_stack(profile, seed, stack_id):
    """Generate one stack; a pure function of ``(profile, seed)``."""
    if not isinstance(profile, DomainProfile):
        raise ParameterError("profile must be a DomainProfile")
    profile.validate()
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    h, w = profile.frame_dims
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5

    cy = h / 2 + rng.uniform(-0.04, 0.04) * h
    cx = w / 2 + rng.uniform(-0.04, 0.04) * w
    ry0 = profile.head_scale * h * rng.uniform(0.92, 1.08)
    rx0 = profile.head_scale * w * rng.uniform(0.85, 1.0)

    n = profile.frames_per_stack
    frames = []
    for k in range(n):
        # slices near the ends of the stack cut a smaller cross-section
        t = 0.0 if n == 1 else 2.0 * k / (n - 1) - 1.0
        shrink = math.sqrt(1.0 - 0.3 * t * t)
        geom = (cy, cx, ry0 * shrink, rx0 * shrink)
        frames.append(_render_frame(rng, profile, geom, yy, xx))
    return Stack(stack_id=stack_id, frames=frames, domain_id=profile.domain_id)


@dataclass
class StackEntry:
    stack_id: str
    domain_id: str
    frame_files: list
    mask_files: list
    positive: bool

    @property
    def n_frames(self):
        return len(self.frame_files)


@dataclass
class DatasetManifest:
    dataset_id: str
    seed: int
    profile: DomainProfile
    stacks: list = field(default_factory=list)
    root: Path = Path(".")
    path: Path = None

    @property
    def n_frames(self):
        return sum(s.n_frames for s in self.stacks)

    def frame_refs(self):
        return [(s.stack_id, i) for s in self.stacks for i in range(s.n_frames)]

    def iter_stacks(self):
        """Yield ``Stack`` objects loaded from disk, in manifest order."""
        for entry in self.stacks:
            frames = [
                (read_frame(self.root / f), read_mask(self.root / m))
                for f, m in zip(entry.frame_files, entry.mask_files)
            ]
            yield Stack(entry.stack_id, frames, entry.domain_id)

    def load_frames(self):
        """All ``(stack_id, index, frame, mask)`` tuples in manifest order."""
        out = []
        for stack in self.iter_stacks():
            for i, (f, m) in enumerate(stack.frames):
                out.append((stack.stack_id, i, f, m))
        return out

    def to_dict(self):
        return {
            "dataset_id": self.dataset_id,
            "seed": int(self.seed),
            "profile": self.profile.to_dict(),
            "stacks": [
                {
                    "stack_id": s.stack_id,
                    "domain_id": s.domain_id,
                    "n_frames": s.n_frames,
                    "positive": s.positive,
                    "frame_files": list(s.frame_files),
                    "mask_files": list(s.mask_files),
                }
                for s in self.stacks
            ],
        }

    def write(self, path):
        path = Path(path)
        try:
            with open(path, "w") as fh:
                json.dump(self.to_dict(), fh, indent=1)
                fh.write("\n")
        except OSError as exc:
            raise StorageError(f"cannot write manifest {path}: {exc}") from exc
        self.path = path

    def validate(self):
        ids = [s.stack_id for s in self.stacks]
        if len(set(ids)) != len(ids):
            raise ParameterError(f"{self.dataset_id}: duplicate stack ids")
        for stack in self.iter_stacks():
            if not stack.frames:
                raise ParameterError(f"stack {stack.stack_id} has no frames")
        return self


def load_manifest(path):
    path = Path(path)
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    stacks = [
        StackEntry(s["stack_id"], s["domain_id"], s["frame_files"], s["mask_files"], s["positive"])
        for s in d["stacks"]
    ]
    for s in stacks:
        for f in s.frame_files + s.mask_files:
            if not (path.parent / f).is_file():
                raise StorageError(f"manifest {path}: missing file {f}")
    return DatasetManifest(
        dataset_id=d["dataset_id"],
        seed=int(d["seed"]),
        profile=DomainProfile.from_dict(d["profile"]),
        stacks=stacks,
        root=path.parent,
        path=path,
    )


def generate_corpus(profile, n_stacks, seed, out_dir, dataset_id=None):
    """Write ``n_stacks`` stacks and ``manifest.json`` under ``out_dir``."""
    profile.validate()
    if n_stacks < 1:
        raise ParameterError("n_stacks must be >= 1")
    out_dir = Path(out_dir)
    dataset_id = dataset_id or out_dir.name or "dataset"
    try:
        os.makedirs(out_dir / "stacks", exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out_dir}: {exc}") from exc

    entries = []
    for i in range(n_stacks):
        sid = f"{dataset_id}-{i:04d}"
        stack = generate_stack(profile, stack_seed(seed, i), sid)
        sdir = out_dir / "stacks" / sid
        os.makedirs(sdir, exist_ok=True)
        ffiles, mfiles = [], []
        for k, (frame, mask) in enumerate(stack.frames):
            fname = f"stacks/{sid}/frame_{k:03d}.nsf"
            mname = f"stacks/{sid}/mask_{k:03d}.nsm"
            write_frame(out_dir / fname, frame)
            write_mask(out_dir / mname, mask)
            ffiles.append(fname)
            mfiles.append(mname)
        entries.append(StackEntry(sid, stack.domain_id, ffiles, mfiles, stack.positive))

    manifest = DatasetManifest(dataset_id, int(seed), profile, entries, root=out_dir)
    manifest.write(out_dir / "manifest.json")
    return manifest
