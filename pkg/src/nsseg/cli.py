"""Command-line entry point: ``nsseg <command> ...``.

Every flag may also be given through ``--options FILE``, a JSON object whose
keys are the flag names (dashes or underscores); explicit flags win.
"""
import argparse
import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from .benchmark import make_benchmark
from .checkpoint import file_checkpoint_id, load_checkpoint
from .errors import StageError
from .metrics import evaluate_model
from .phantom import generate_corpus, load_manifest, load_profile
from .pipeline import load_experiment, run_ablation, run_noisy_student
from .plotting import plot_score_ranking
from .pseudolabel import (
    RankerConfig,
    build_pseudo_labels,
    infer_corpus,
    load_scored,
    positive_count,
    render_gallery,
)

LOCK_NAME = ".nsseg.lock"


class LockError(RuntimeError):
    pass


@contextmanager
def output_lock(out_dir):
    """One CLI process per output directory."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def cmd_gen_data(args):
    profile = load_profile(args.profile)
    with output_lock(args.out):
        m = generate_corpus(profile, args.stacks, args.seed, args.out, dataset_id=args.dataset_id)
    print(f"wrote {len(m.stacks)} stacks ({m.n_frames} frames) to {args.out}/manifest.json")


def cmd_benchmark(args):
    with output_lock(args.out):
        path = make_benchmark(args.out, seed=args.seed)
    print(f"wrote benchmark; experiment config at {path}")


def _experiment(args, **overrides):
    cfg = load_experiment(args.config)
    return replace(cfg, **overrides) if overrides else cfg


def _print_models(report):
    for m in report["models"]:
        t = m["test"]
        print(f"{m['role']:>12} {m['iteration']}  test stack AP {t['stack_ap']:.4f}  "
              f"ROC {t['stack_roc_auc']:.4f}  pixel AP {t['pixel_ap']:.4f}")


def cmd_train(args):
    cfg = _experiment(args, mode="baseline")
    with output_lock(args.out):
        report = run_noisy_student(cfg, args.out)
    _print_models(report)


def cmd_ns_run(args):
    cfg = _experiment(args)
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    with output_lock(args.out):
        report = run_noisy_student(cfg, args.out)
    _print_models(report)


def cmd_ablate(args):
    cfg = _experiment(args)
    with output_lock(args.out):
        rows = run_ablation(cfg, args.axis, args.out)
    for r in rows:
        t = r["test"]
        print(f"{r['name']:>10}  test stack AP {t['stack_ap']:.4f}  ROC {t['stack_roc_auc']:.4f}  "
              f"pixel AP {t['pixel_ap']:.4f}")


def cmd_pseudo_label(args):
    ranker = RankerConfig(args.ranker_c, args.k_pos, args.k_neg).validate()
    teacher = load_checkpoint(args.teacher)
    corpus = load_manifest(args.corpus)
    out = Path(args.out)
    with output_lock(out):
        try:
            scored = infer_corpus(teacher, corpus, out)
        except Exception as exc:
            raise StageError("infer-corpus", exc) from exc
        try:
            pset = build_pseudo_labels(scored, corpus, ranker, out, out,
                                       teacher_id=file_checkpoint_id(args.teacher),
                                       use_ranker=not args.no_ranker)
        except Exception as exc:
            raise StageError("pseudo-label", exc) from exc
        with open(out / "scored.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stack_id", "index", "score", "positive"])
            pos = {(e.stack_id, e.index): e.positive for e in pset.entries}
            for s in scored:
                w.writerow([s.stack_id, s.index, repr(s.score), int(pos[s.frame_ref])])
        n_pos = positive_count(len(scored), ranker.percentile_c)
        plot_score_ranking([s.score for s in scored], n_pos, out / "scores.png", ranker.percentile_c)
    print(f"{len(scored)} frames scored, {sum(e.positive for e in pset.entries)} marked positive")


def cmd_gallery(args):
    scored, corpus_path = load_scored(args.scored)
    corpus = load_manifest(corpus_path)
    thresholds = [float(t) for t in str(args.thresholds).split(",") if t.strip()]
    ranker = RankerConfig(k_pos=args.k_pos)
    with output_lock(args.out):
        paths = render_gallery(scored, corpus, thresholds, args.n, args.out, args.scored, ranker)
    for p in paths:
        print(p)


def cmd_eval(args):
    model = load_checkpoint(args.model)
    dataset = load_manifest(args.dataset)
    report = evaluate_model(model, dataset, model_id=file_checkpoint_id(args.model))
    out = Path(args.out)
    if out.parent:
        os.makedirs(out.parent, exist_ok=True)
    report.write(out)
    print(json.dumps({k: getattr(report, k) for k in ("pixel_ap", "frame_ap", "stack_ap",
                                                         "stack_roc_auc")}))


def build_parser():
    p = argparse.ArgumentParser(prog="nsseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--options", help="JSON file supplying defaults for any flag")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate a phantom dataset")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--stacks", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dataset-id", default=None)

    sp = add("benchmark", cmd_benchmark, "generate the bundled benchmark and experiment config")
    sp.add_argument("--seed", type=int, default=2021)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the baseline (teacher only)")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)

    sp = add("pseudo-label", cmd_pseudo_label, "score a corpus and write pseudo-labels")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ranker-c", type=float, default=10)
    sp.add_argument("--k-pos", type=float, default=0.7)
    sp.add_argument("--k-neg", type=float, default=0.3)
    sp.add_argument("--no-ranker", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("gallery", cmd_gallery, "render ranker calibration galleries")
    sp.add_argument("--scored", required=True)
    sp.add_argument("--thresholds", default="5,10,15,20,25,30")
    sp.add_argument("--n", type=int, default=25)
    sp.add_argument("--k-pos", type=float, default=0.7)
    sp.add_argument("--out", required=True)

    sp = add("ns-run", cmd_ns_run, "run the Noisy Student loop")
    sp.add_argument("--config", required=True)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--mode", default=None)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)

    sp = add("ablate", cmd_ablate, "ranker or contrast ablation")
    sp.add_argument("--config", required=True)
    sp.add_argument("--axis", choices=("ranker", "contrast"), required=True)
    sp.add_argument("--out", required=True)
    return p


def _apply_options(parser, argv):
    """Re-parse with defaults taken from ``--options`` so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--options")
    known, _ = pre.parse_known_args(argv)
    if not known.options:
        return parser.parse_args(argv)
    with open(known.options) as fh:
        opts = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    command = next(a for a in argv if not a.startswith("-"))
    sp = parser._subparsers._group_actions[0].choices[command]
    for action in sp._actions:
        if action.dest in opts:
            action.default = opts[action.dest]
            action.required = False
    return parser.parse_args(argv)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_options(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"nsseg {args.command}: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any failure with the command name
        print(f"nsseg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
