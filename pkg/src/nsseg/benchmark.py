"""The bundled synthetic benchmark: a small labeled seed set from one domain,
a large unlabeled corpus from a shifted domain, and validation/test sets from
two further domains."""
import json
import os
from dataclasses import replace
from pathlib import Path

from .phantom import DomainProfile, generate_corpus
from .rng import derive_seed

SOURCE = DomainProfile(domain_id="source", noise_sigma=0.02, contrast_bias=1.0, head_scale=0.40,
                       lesion_rate=0.25, lesion_brightness=0.25, frame_dims=(48, 48),
                       frames_per_stack=4)
# Shifted domains: darker gamma, more noise, smaller heads and bright streak
# artifacts that are never labeled. The unlabeled lesion rate sits just under
# the ranker's default C so its positive set is mostly true lesions.
UNLABELED = DomainProfile(domain_id="shifted-a", noise_sigma=0.07, contrast_bias=0.85, head_scale=0.34,
                          lesion_rate=0.09, lesion_brightness=0.25, frame_dims=(48, 48),
                          frames_per_stack=4, artifact_rate=0.5, artifact_brightness=0.35)
VALIDATION = replace(UNLABELED, domain_id="shifted-b", noise_sigma=0.06, head_scale=0.36,
                     lesion_rate=0.14)
TEST = replace(UNLABELED, domain_id="shifted-c", noise_sigma=0.075, head_scale=0.35, lesion_rate=0.1)

SIZES = {"labeled": 20, "unlabeled": 200, "validation": 20, "test": 40}
PROFILES = {"labeled": SOURCE, "unlabeled": UNLABELED, "validation": VALIDATION, "test": TEST}

DEFAULT_EXPERIMENT = {
    "teacher": {},
    "student": {},
    "ranker": {"percentile_c": 10, "k_pos": 0.7, "k_neg": 0.3},
    "iterations": 1,
    "mode": "noisy_student",
}


def make_benchmark(out_dir, seed=2021, sizes=None, experiment=None):
    """Generate the four datasets and an ``experiment.json`` pointing at them."""
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    sizes = {**SIZES, **(sizes or {})}
    for name, profile in PROFILES.items():
        with open(out / f"profile_{name}.json", "w") as fh:
            json.dump(profile.to_dict(), fh, indent=1)
            fh.write("\n")
        generate_corpus(profile, sizes[name], derive_seed(seed, "data-gen", name), out / name,
                        dataset_id=name)
    exp = {**DEFAULT_EXPERIMENT, **(experiment or {})}
    exp.update({name: f"{name}/manifest.json" for name in PROFILES})
    exp.setdefault("seed", seed)
    with open(out / "experiment.json", "w") as fh:
        json.dump(exp, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out / "experiment.json"
