"""Synthetic cohorts with known proficiencies and a two-level concept tree."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import ConceptHierarchy, Dataset, QMatrix, ResponseLog, write_dataset
from .metrics import DEFAULT_SAMPLE_CAP, doa

LOGIT_SCALE = 1.7


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    """Defaults: 165 students, 250 exercises, 74 concepts under 7 parents, ~82 logs per student."""

    n_students: int = 165
    n_exercises: int = 250
    n_concepts: int = 74
    n_parents: int = 7
    concepts_per_exercise: tuple[int, int] = (1, 1)
    logs_per_student: tuple[int, int] = (65, 100)
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.concepts_per_exercise = tuple(int(v) for v in self.concepts_per_exercise)
        self.logs_per_student = tuple(int(v) for v in self.logs_per_student)
        counts = dict(n_students=self.n_students, n_exercises=self.n_exercises,
                      n_concepts=self.n_concepts, n_parents=self.n_parents)
        for name, v in counts.items():
            if v < 1:
                raise SynthConfigError(f"{name} must be >= 1")
        if self.n_parents > self.n_concepts:
            raise SynthConfigError("n_parents must not exceed n_concepts")
        lo, hi = self.concepts_per_exercise
        if not 1 <= lo <= hi:
            raise SynthConfigError("concepts_per_exercise must be a range with 1 <= lo <= hi")
        if hi > self.n_concepts:
            raise SynthConfigError(
                f"concepts_per_exercise up to {hi} exceeds n_concepts={self.n_concepts}"
            )
        lo, hi = self.logs_per_student
        if not 1 <= lo <= hi:
            raise SynthConfigError("logs_per_student must be a range with 1 <= lo <= hi")
        if hi > self.n_exercises:
            raise SynthConfigError(
                f"logs_per_student up to {hi} exceeds n_exercises={self.n_exercises}"
            )
        if self.noise_sd < 0:
            raise SynthConfigError("noise_sd must be >= 0")


@dataclass
class GroundTruth:
    theta_parent: np.ndarray   # (N, L)
    theta_child: np.ndarray    # (N, K)
    difficulty: np.ndarray     # (M, 1)
    discrimination: np.ndarray  # (M, 1)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    N, M, K, L = cfg.n_students, cfg.n_exercises, cfg.n_concepts, cfg.n_parents

    parent_of = np.arange(K) % L
    theta_parent = rng.uniform(0.0, 1.0, size=(N, L))
    noise = rng.normal(0.0, cfg.noise_sd, size=(N, K)) if cfg.noise_sd > 0 else np.zeros((N, K))
    theta_child = np.clip(theta_parent[:, parent_of] + noise, 0.0, 1.0)

    # first concept cycles through a permutation so every concept is used when M >= K
    cycle = rng.permutation(K)
    q_pairs = []
    concepts_of = []
    for j in range(M):
        n_c = rng.integers(cfg.concepts_per_exercise[0], cfg.concepts_per_exercise[1] + 1)
        first = cycle[j % K]
        rest = rng.choice(np.delete(np.arange(K), first), size=n_c - 1, replace=False)
        cs = np.sort(np.concatenate([[first], rest]).astype(np.int64))
        concepts_of.append(cs)
        q_pairs.extend((int(k), j) for k in cs)
    difficulty = rng.uniform(0.0, 1.0, size=(M, 1))
    discrimination = rng.uniform(0.5, 2.5, size=(M, 1))

    logs = []
    for i in range(N):
        n_l = rng.integers(cfg.logs_per_student[0], cfg.logs_per_student[1] + 1)
        for j in np.sort(rng.choice(M, size=n_l, replace=False)):
            mastery = theta_child[i, concepts_of[j]].mean()
            p = _sigmoid(LOGIT_SCALE * discrimination[j, 0] * (mastery - difficulty[j, 0]))
            logs.append(ResponseLog(i, int(j), int(rng.random() < p)))

    width = len(str(max(N, M, K) - 1))
    ds = Dataset(
        student_ids=tuple(f"s{i:0{width}d}" for i in range(N)),
        exercise_ids=tuple(f"e{j:0{width}d}" for j in range(M)),
        concept_ids=tuple(f"c{k:0{width}d}" for k in range(K)),
        logs=tuple(logs),
        q=QMatrix(tuple(sorted(q_pairs)), K=K, M=M),
        hierarchy=ConceptHierarchy(tuple(int(p) for p in parent_of), L,
                                   tuple(f"p{l}" for l in range(L))),
    )
    return ds, GroundTruth(theta_parent, theta_child, difficulty, discrimination)


def ground_truth_doa(gt: GroundTruth, dataset: Dataset, logs=None,
                     sample_cap: Optional[int] = DEFAULT_SAMPLE_CAP) -> Optional[float]:
    """DOA of the true child proficiencies against (a subset of) the generated logs."""
    return doa(gt.theta_child, dataset.logs if logs is None else logs, dataset.q.dense(),
               sample_cap=sample_cap)[0]


def write_cohort(dataset: Dataset, gt: GroundTruth, out_dir, cfg: Optional[SynthConfig] = None):
    """Write the canonical CSVs plus ``ground_truth.csv`` (student_id, concept_id, theta)."""
    out_dir = Path(out_dir)
    paths = write_dataset(dataset, out_dir)
    paths["ground_truth"] = out_dir / "ground_truth.csv"
    with open(paths["ground_truth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "concept_id", "theta"])
        for i, sid in enumerate(dataset.student_ids):
            for k, cid in enumerate(dataset.concept_ids):
                w.writerow([sid, cid, repr(float(gt.theta_child[i, k]))])
    return paths


def config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["concepts_per_exercise"] = list(cfg.concepts_per_exercise)
    d["logs_per_student"] = list(cfg.logs_per_student)
    return d
