import json
import shutil
from dataclasses import replace

import pytest

from nsseg.errors import ParameterError, StageError
from nsseg.pipeline import ExperimentConfig, load_experiment, run_ablation, run_noisy_student


def tree_bytes(root, pattern):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob(pattern))}


def test_zero_iterations_is_baseline(quick_experiment, tmp_path):
    cfg = load_experiment(quick_experiment)
    a = run_noisy_student(replace(cfg, iterations=0), tmp_path / "a")
    b = run_noisy_student(replace(cfg, mode="baseline"), tmp_path / "b")
    assert a["iterations_run"] == 0 and len(a["models"]) == 1
    assert a["models"] == b["models"]
    assert (tmp_path / "a/iter0/teacher.nsc").read_bytes() == (tmp_path / "b/iter0/teacher.nsc").read_bytes()


def test_one_iteration(quick_experiment, tmp_path):
    rep = run_noisy_student(load_experiment(quick_experiment), tmp_path)
    assert [m["role"] for m in rep["models"]] == ["teacher", "student"]
    student = rep["models"][1]
    assert student["pseudo_frames"] == 24
    # ceil(24 * 10 / 100)
    assert student["pseudo_positive_frames"] == 3
    for name in ("report.json", "timings.json", "metrics.csv", "metrics.png",
                 "iter1/student.nsc", "iter1/pseudo/pseudo.json", "iter1/scored/scored.json"):
        assert (tmp_path / name).is_file(), name
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2


def test_two_iterations_chain_teachers(quick_experiment, tmp_path):
    rep = run_noisy_student(replace(load_experiment(quick_experiment), iterations=2), tmp_path)
    assert [m["iteration"] for m in rep["models"]] == [0, 1, 2]
    ps2 = json.loads((tmp_path / "iter2/pseudo/pseudo.json").read_text())
    assert ps2["teacher_id"] == rep["models"][1]["checkpoint_id"]


def test_run_reproducible(quick_experiment, tmp_path):
    cfg = load_experiment(quick_experiment)
    run_noisy_student(cfg, tmp_path / "a")
    run_noisy_student(cfg, tmp_path / "b")
    for pattern in ("*.nsc", "*.nsm", "*.nsp", "report.json", "pseudo.json", "metrics.csv"):
        a, b = tree_bytes(tmp_path / "a", pattern), tree_bytes(tmp_path / "b", pattern)
        assert a and a == b, pattern


def test_frame_oracle_mode(quick_experiment, tmp_path):
    rep = run_noisy_student(replace(load_experiment(quick_experiment), mode="frame_oracle"), tmp_path)
    assert [m["role"] for m in rep["models"]] == ["teacher", "frame_oracle"]
    assert (tmp_path / "oracle/oracle.nsc").is_file()


def test_ranker_ablation(quick_experiment, tmp_path):
    rows = run_ablation(load_experiment(quick_experiment), "ranker", tmp_path)
    assert [r["name"] for r in rows] == ["No Ranker", "Ranker"]
    # the shared teacher is written identically into both runs
    assert (tmp_path / "ranker/iter0/teacher.nsc").read_bytes() == \
        (tmp_path / "no_ranker/iter0/teacher.nsc").read_bytes()
    nr = json.loads((tmp_path / "no_ranker/iter1/pseudo/pseudo.json").read_text())
    assert nr["use_ranker"] is False and nr["n_positive"] == len(nr["entries"])
    for f in ("ablation.json", "ablation.csv", "ablation.png"):
        assert (tmp_path / f).is_file()


def test_contrast_ablation(quick_experiment, tmp_path):
    rows = run_ablation(load_experiment(quick_experiment), "contrast", tmp_path)
    assert [r["name"] for r in rows] == ["Baseline", "Power Law", "Log", "All"]
    assert len({r["checkpoint_id"] for r in rows}) == 4


def test_bad_axis(quick_experiment, tmp_path):
    with pytest.raises(ParameterError):
        run_ablation(load_experiment(quick_experiment), "depth", tmp_path)


def test_stage_error_names_stage(quick_experiment, tmp_path):
    root = tmp_path / "bench"
    shutil.copytree(quick_experiment.parent, root)
    victim = sorted((root / "unlabeled/stacks").rglob("frame_*.nsf"))[0]
    victim.write_bytes(b"NSF1\x01")
    with pytest.raises(StageError) as info:
        run_noisy_student(load_experiment(root / "experiment.json"), tmp_path / "out")
    assert info.value.stage == "iter1/infer-corpus"


def test_config_validation(quick_experiment):
    cfg = load_experiment(quick_experiment)
    with pytest.raises(ParameterError):
        replace(cfg, mode="bogus").validate()
    with pytest.raises(ParameterError):
        replace(cfg, iterations=-1).validate()
    back = ExperimentConfig.from_dict(cfg.to_dict(), base_dir=cfg.base_dir)
    assert back == cfg
