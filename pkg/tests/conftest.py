import json

import numpy as np
import pytest

from nsseg.benchmark import make_benchmark
from nsseg.phantom import DomainProfile, generate_corpus

SMALL = DomainProfile(domain_id="small", noise_sigma=0.03, lesion_rate=0.4, frame_dims=(24, 24),
                      frames_per_stack=3)

QUICK_TRAIN = {"epochs": 2, "steps_per_epoch": 3, "batch_size": 4, "crop_size": 16}


@pytest.fixture
def small_corpus(tmp_path):
    return generate_corpus(SMALL, 4, 7, tmp_path / "corpus", dataset_id="small")


@pytest.fixture(scope="session")
def quick_experiment(tmp_path_factory):
    """A miniature benchmark whose experiment trains for a handful of steps."""
    root = tmp_path_factory.mktemp("quick")
    sizes = {"labeled": 4, "unlabeled": 6, "validation": 4, "test": 4}
    exp = {"teacher": QUICK_TRAIN, "student": QUICK_TRAIN, "seed": 11}
    path = make_benchmark(root, seed=5, sizes=sizes, experiment=exp)
    # the miniature sets must hold both classes at stack level for the metrics
    for name in ("validation", "test"):
        with open(root / name / "manifest.json") as fh:
            flags = [s["positive"] for s in json.load(fh)["stacks"]]
        assert any(flags) and not all(flags), name
    return path


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
