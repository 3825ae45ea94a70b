"""Noisy Student driver: teacher -> pseudo-labels -> noised student -> repeat.

Seeds for every model come from the master seed: model ``k`` (0 = initial
teacher) is initialised from ``derive_seed(seed, "init", k, repeat)`` and
trained with ``derive_seed(seed, "train", k, repeat)``. Runs that differ only
in the ablated stage therefore share every other random draw.
"""
import csv
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import POS
from .checkpoint import file_checkpoint_id, load_checkpoint, save_checkpoint
from .errors import ParameterError, StageError
from .metrics import evaluate_model
from .model import DEFAULT_CHANNELS, TinyFCN
from .phantom import load_manifest
from .pseudolabel import RankerConfig, build_pseudo_labels, infer_corpus
from .rng import derive_seed
from .train import TrainConfig, TrainingSet, train, train_frame_oracle

log = logging.getLogger(__name__)

MODES = ("baseline", "noisy_student", "frame_oracle", "no_ranker_ablation")
METRIC_KEYS = ("pixel_ap", "frame_ap", "stack_ap", "stack_roc_auc")
SPLITS = ("validation", "test")


@dataclass
class ExperimentConfig:
    labeled: str
    unlabeled: str
    validation: str
    test: str
    teacher: TrainConfig = field(default_factory=TrainConfig)
    student: TrainConfig = field(default_factory=TrainConfig)
    ranker: RankerConfig = field(default_factory=RankerConfig)
    iterations: int = 1
    mode: str = "noisy_student"
    seed: int = 0
    channels: tuple = DEFAULT_CHANNELS
    kernel: int = 3
    repeats: int = 1
    base_dir: Path = Path(".")

    def validate(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")
        for name in ("labeled", "unlabeled", "validation", "test"):
            if not self.path(name).is_file():
                raise ParameterError(f"{name} manifest not found: {self.path(name)}")
        self.teacher.validate()
        self.student.validate()
        self.ranker.validate()
        return self

    def path(self, name):
        return (Path(self.base_dir) / getattr(self, name)).resolve()

    def to_dict(self):
        return {
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "validation": self.validation,
            "test": self.test,
            "teacher": self.teacher.to_dict(),
            "student": self.student.to_dict(),
            "ranker": self.ranker.to_dict(),
            "iterations": self.iterations,
            "mode": self.mode,
            "seed": self.seed,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "repeats": self.repeats,
        }

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown experiment keys: {sorted(unknown)}")
        for key, kind in (("teacher", TrainConfig), ("student", TrainConfig)):
            if key in d:
                d[key] = kind.from_dict(d[key])
        if "ranker" in d:
            d["ranker"] = RankerConfig.from_dict(d["ranker"])
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(base_dir=Path(base_dir), **d)


def load_experiment(path):
    path = Path(path)
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh), base_dir=path.parent)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


class _Stage:
    """Times a named stage and re-raises failures as StageError."""

    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 3)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


class _Context:
    def __init__(self, cfg, out_dir):
        self.cfg = cfg.validate()
        self.out = Path(out_dir)
        os.makedirs(self.out, exist_ok=True)
        self.timings = {}
        self.manifests = {}
        self._labeled = None

    def manifest(self, name):
        if name not in self.manifests:
            self.manifests[name] = load_manifest(self.cfg.path(name))
        return self.manifests[name]

    @property
    def labeled(self):
        if self._labeled is None:
            self._labeled = TrainingSet.from_manifest(self.manifest("labeled"))
        return self._labeled

    def fresh_model(self, k, repeat=0):
        cfg = self.cfg
        return TinyFCN.init(derive_seed(cfg.seed, "init", k, repeat), cfg.channels, cfg.kernel)

    def train_cfg(self, base, k, repeat=0):
        return replace(base, seed=derive_seed(self.cfg.seed, "train", k, repeat))

    def stage(self, name):
        return _Stage(name, self.timings)

    def evaluate(self, model, model_id, tag):
        out = {}
        for split in SPLITS:
            with self.stage(f"{tag}/evaluate-{split}"):
                out[split] = evaluate_model(model, self.manifest(split), model_id).to_dict()
        return out


def _train_teacher(ctx):
    """Train on the labeled set only; this is also the baseline."""
    cfg = ctx.cfg
    d = ctx.out / "iter0"
    os.makedirs(d, exist_ok=True)
    models, evals = [], []
    for r in range(cfg.repeats):
        with ctx.stage(f"iter0/train-teacher-{r}"):
            tcfg = ctx.train_cfg(cfg.teacher, 0, r)
            model = train(ctx.fresh_model(0, r), ctx.labeled, None, tcfg)
            name = "teacher.nsc" if r == 0 else f"teacher_r{r}.nsc"
            cid = save_checkpoint(model, d / name, tcfg)
        models.append((model, name, cid))
        evals.append(ctx.evaluate(model, cid, f"iter0/r{r}"))
    entry = {
        "iteration": 0,
        "role": "teacher",
        "checkpoint": f"iter0/{models[0][1]}",
        "checkpoint_id": models[0][2],
        "pseudo_label_set": None,
    }
    if cfg.repeats == 1:
        entry.update(evals[0])
    else:
        entry["repeats"] = evals
        for split in SPLITS:
            entry[split] = {k: float(np.mean([e[split][k] for e in evals])) for k in METRIC_KEYS}
    return models[0][0], models[0][2], entry


def _student_iteration(ctx, k, teacher, teacher_id, use_ranker):
    cfg = ctx.cfg
    d = ctx.out / f"iter{k}"
    corpus = ctx.manifest("unlabeled")
    with ctx.stage(f"iter{k}/infer-corpus"):
        scored = infer_corpus(teacher, corpus, d / "scored")
    with ctx.stage(f"iter{k}/pseudo-label"):
        pset = build_pseudo_labels(scored, corpus, cfg.ranker, d / "pseudo", d / "scored",
                                   teacher_id=teacher_id, use_ranker=use_ranker)
    with ctx.stage(f"iter{k}/train-student"):
        scfg = ctx.train_cfg(cfg.student, k)
        student = train(ctx.fresh_model(k), ctx.labeled, TrainingSet.from_pseudo(pset), scfg)
        cid = save_checkpoint(student, d / "student.nsc", scfg)
    entry = {
        "iteration": k,
        "role": "student",
        "checkpoint": f"iter{k}/student.nsc",
        "checkpoint_id": cid,
        "pseudo_label_set": f"iter{k}/pseudo/pseudo.json",
        "pseudo_positive_frames": sum(e.positive for e in pset.entries),
        "pseudo_frames": len(pset.entries),
    }
    entry.update(ctx.evaluate(student, cid, f"iter{k}"))
    return student, cid, entry


def _frame_oracle(ctx):
    cfg = ctx.cfg
    d = ctx.out / "oracle"
    os.makedirs(d, exist_ok=True)
    with ctx.stage("oracle/train"):
        rows = ctx.manifest("unlabeled").load_frames()
        frames = [r[2] for r in rows]
        labels = [bool((r[3] == POS).any()) for r in rows]
        scfg = ctx.train_cfg(cfg.student, 1)
        model = train_frame_oracle(ctx.fresh_model(1), ctx.labeled, frames, labels, scfg)
        cid = save_checkpoint(model, d / "oracle.nsc", scfg)
    entry = {"iteration": 1, "role": "frame_oracle", "checkpoint": "oracle/oracle.nsc",
             "checkpoint_id": cid, "pseudo_label_set": None}
    entry.update(ctx.evaluate(model, cid, "oracle"))
    return entry


def run_noisy_student(cfg, out_dir):
    """Run the experiment in ``cfg.mode``; writes ``report.json`` and returns it as a dict.

    With ``iterations=0`` (or ``mode="baseline"``) only the teacher is trained.
    """
    return _run(cfg, out_dir)[0]


def _run(cfg, out_dir, teacher=None):
    # teacher: optional (model, checkpoint_id, report_entry) from a run with the same seed
    ctx = _Context(cfg, out_dir)
    mode = cfg.mode
    iterations = 0 if mode == "baseline" else cfg.iterations
    if teacher is None:
        model, cid, entry = _train_teacher(ctx)
    else:
        model, cid, entry = teacher
        os.makedirs(ctx.out / "iter0", exist_ok=True)
        save_checkpoint(model, ctx.out / "iter0" / "teacher.nsc", ctx.train_cfg(cfg.teacher, 0))
    entries = [entry]
    teacher_triple = (model, cid, entry)
    if mode == "frame_oracle":
        entries.append(_frame_oracle(ctx))
    else:
        for k in range(1, iterations + 1):
            model, cid, entry = _student_iteration(ctx, k, model, cid, mode != "no_ranker_ablation")
            entries.append(entry)

    report = {
        "mode": mode,
        "iterations_run": iterations,
        "pseudo_labels_regenerated_each_iteration": True,
        "config": cfg.to_dict(),
        "models": entries,
    }
    _write_json(ctx.out / "report.json", report)
    _write_json(ctx.out / "timings.json", ctx.timings)
    write_metrics_csv(ctx.out / "metrics.csv", entries)
    from .plotting import plot_run_report

    plot_run_report(report, ctx.out / "metrics.png")
    return report, teacher_triple


def write_metrics_csv(path, entries, name_key="role"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "iteration", "split", *METRIC_KEYS])
        for e in entries:
            for split in SPLITS:
                w.writerow([e[name_key], e.get("iteration", ""), split,
                            *(repr(float(e[split][k])) for k in METRIC_KEYS)])


ABLATION_AXES = ("ranker", "contrast")
CONTRAST_ROWS = (("Baseline", "none"), ("Power Law", "power_law"), ("Log", "log"), ("All", "all"))


def run_ablation(cfg, axis, out_dir):
    """Side-by-side comparison along one axis; returns a list of rows.

    ``ranker``: Noisy Student with and without the frame partition (the
    teacher is trained once and shared). ``contrast``: the baseline under
    each contrast-augmentation policy.
    """
    if axis not in ABLATION_AXES:
        raise ParameterError(f"axis must be one of {ABLATION_AXES}")
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    rows = []
    if axis == "ranker":
        with_r, teacher = _run(replace(cfg, mode="noisy_student"), out / "ranker")
        without, _ = _run(replace(cfg, mode="no_ranker_ablation"), out / "no_ranker", teacher)
        for name, rep in (("No Ranker", without), ("Ranker", with_r)):
            final = rep["models"][-1]
            rows.append({"name": name, "run": "no_ranker" if rep is without else "ranker",
                         "checkpoint_id": final["checkpoint_id"],
                         "validation": final["validation"], "test": final["test"]})
    else:
        for name, policy in CONTRAST_ROWS:
            sub = replace(cfg, mode="baseline", teacher=replace(cfg.teacher, contrast=policy))
            rep = run_noisy_student(sub, out / policy)
            final = rep["models"][0]
            rows.append({"name": name, "run": policy, "checkpoint_id": final["checkpoint_id"],
                         "validation": final["validation"], "test": final["test"]})
    _write_json(out / "ablation.json", {"axis": axis, "rows": rows})
    write_metrics_csv(out / "ablation.csv", rows, name_key="name")
    from .plotting import plot_ablation

    plot_ablation(rows, axis, out / "ablation.png")
    return rows
