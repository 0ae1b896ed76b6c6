"""Response logs, Q-matrix and concept hierarchy: loading, indexing, splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


class IdRegistry:
    """Bijection between opaque external string ids and dense 0-based indices."""

    def __init__(self, ids: Sequence[str] = ()):
        self.ids: list[str] = []
        self._index: dict[str, int] = {}
        for x in ids:
            self.add(x)

    def add(self, ext_id: str) -> int:
        idx = self._index.get(ext_id)
        if idx is None:
            idx = len(self.ids)
            self.ids.append(ext_id)
            self._index[ext_id] = idx
        return idx

    def index(self, ext_id: str) -> int:
        return self._index[ext_id]

    def get(self, ext_id: str) -> Optional[int]:
        return self._index.get(ext_id)

    def __contains__(self, ext_id: str) -> bool:
        return ext_id in self._index

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class IdMaps:
    students: IdRegistry = field(default_factory=IdRegistry)
    exercises: IdRegistry = field(default_factory=IdRegistry)
    concepts: IdRegistry = field(default_factory=IdRegistry)
    parents: IdRegistry = field(default_factory=IdRegistry)


@dataclass(frozen=True)
class ResponseLog:
    student_index: int
    exercise_index: int
    score: int


@dataclass(frozen=True)
class QMatrix:
    """Binary K x M concept/exercise incidence, kept as sorted (concept, exercise) pairs."""

    pairs: tuple[tuple[int, int], ...]
    K: int
    M: int

    def dense(self) -> np.ndarray:
        """Exercise-major dense view, shape (M, K): row j is the j-th column of Q."""
        out = np.zeros((self.M, self.K), dtype=np.float32)
        if self.pairs:
            arr = np.asarray(self.pairs, dtype=np.int64)
            out[arr[:, 1], arr[:, 0]] = 1.0
        return out

    def column(self, j: int) -> np.ndarray:
        return self.dense()[j]

    def concepts_of(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.M)]
        for k, j in self.pairs:
            out[j].append(k)
        return out


@dataclass(frozen=True)
class ConceptHierarchy:
    parent_of: tuple[int, ...]
    L: int
    parent_ids: tuple[str, ...] = ()

    def support(self) -> np.ndarray:
        """K x L boolean mask of the trainable entries of the parent-child map."""
        K = len(self.parent_of)
        mask = np.zeros((K, self.L), dtype=bool)
        mask[np.arange(K), np.asarray(self.parent_of, dtype=np.int64)] = True
        return mask


@dataclass(frozen=True)
class Dataset:
    student_ids: tuple[str, ...]
    exercise_ids: tuple[str, ...]
    concept_ids: tuple[str, ...]
    logs: tuple[ResponseLog, ...]
    q: QMatrix
    hierarchy: Optional[ConceptHierarchy] = None

    def __post_init__(self):
        if not self.student_ids:
            raise DataError("dataset has no students")
        if not self.exercise_ids:
            raise DataError("dataset has no exercises")
        if self.q.K != len(self.concept_ids) or self.q.M != len(self.exercise_ids):
            raise DataError("Q-matrix shape disagrees with id lists")
        if self.hierarchy is not None and len(self.hierarchy.parent_of) != self.q.K:
            raise DataError("hierarchy does not cover every concept")

    @property
    def N(self) -> int:
        return len(self.student_ids)

    @property
    def M(self) -> int:
        return len(self.exercise_ids)

    @property
    def K(self) -> int:
        return self.q.K

    @property
    def L(self) -> Optional[int]:
        return None if self.hierarchy is None else self.hierarchy.L


@dataclass(frozen=True)
class Split:
    train: tuple[ResponseLog, ...]
    valid: tuple[ResponseLog, ...]
    test: tuple[ResponseLog, ...]


def _rows(path: Path, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    """Yield (line number, stripped fields) for the non-blank data rows of a CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        seen_header = False
        for row in reader:
            lineno = reader.line_num
            fields = [c.strip() for c in row]
            if not any(fields):
                continue
            if not seen_header:
                if tuple(fields) != header:
                    raise DataError(
                        f"{path}: expected header {','.join(header)!r} at line {lineno}"
                    )
                seen_header = True
                continue
            if len(fields) != len(header) or not all(fields):
                raise DataError(f"{path}: malformed row at line {lineno}")
            yield lineno, fields
        if not seen_header:
            raise DataError(f"{path}: empty file")


def load_responses(path, id_maps: IdMaps) -> list[ResponseLog]:
    logs: list[ResponseLog] = []
    seen: set[tuple[int, int]] = set()
    n_dup = 0
    for lineno, (sid, eid, raw) in _rows(path, ("student_id", "exercise_id", "score")):
        if raw not in ("0", "1"):
            try:
                value = float(raw)
            except ValueError:
                raise DataError(f"malformed score {raw!r} at line {lineno}") from None
            if value not in (0.0, 1.0):
                raise DataError(f"score outside {{0,1}} at line {lineno}")
            raw = str(int(value))
        i = id_maps.students.add(sid)
        j = id_maps.exercises.add(eid)
        if (i, j) in seen:
            n_dup += 1
            continue
        seen.add((i, j))
        logs.append(ResponseLog(i, j, int(raw)))
    if not logs:
        raise DataError(f"{path}: empty file")
    if n_dup:
        logger.warning("dropped %d duplicate (student, exercise) logs, kept first", n_dup)
    return logs


def load_qmatrix(path, id_maps: IdMaps) -> QMatrix:
    """Read exercise/concept pairs.

    Exercises already registered (from the response file) must all receive at least
    one concept; exercises that only appear here are registered as well.
    """
    pairs: set[tuple[int, int]] = set()
    n_dup = 0
    for _, (eid, cid) in _rows(path, ("exercise_id", "concept_id")):
        j = id_maps.exercises.add(eid)
        k = id_maps.concepts.add(cid)
        if (k, j) in pairs:
            n_dup += 1
        pairs.add((k, j))
    if n_dup:
        logger.warning("dropped %d duplicate Q-matrix pairs", n_dup)
    covered = {j for _, j in pairs}
    for j, eid in enumerate(id_maps.exercises.ids):
        if j not in covered:
            raise DataError(f"exercise without concepts: {eid}")
    return QMatrix(tuple(sorted(pairs)), K=len(id_maps.concepts), M=len(id_maps.exercises))


def load_hierarchy(path, id_maps: IdMaps) -> ConceptHierarchy:
    parent_of: dict[int, int] = {}
    for _, (cid, pid) in _rows(path, ("child_concept_id", "parent_concept_id")):
        k = id_maps.concepts.get(cid)
        if k is None:
            logger.warning("hierarchy child %s is not in the Q-matrix, ignored", cid)
            continue
        p = id_maps.parents.add(pid)
        if k in parent_of:
            if parent_of[k] == p:
                continue
            raise DataError(f"child with multiple parents: {cid}")
        parent_of[k] = p
    for k, cid in enumerate(id_maps.concepts.ids):
        if k not in parent_of:
            raise DataError(f"concept missing from hierarchy: {cid}")
    # re-densify parents in case an ignored child was the only user of one
    used = sorted(set(parent_of.values()))
    remap = {p: n for n, p in enumerate(used)}
    ids = tuple(id_maps.parents.ids[p] for p in used)
    return ConceptHierarchy(
        parent_of=tuple(remap[parent_of[k]] for k in range(len(id_maps.concepts))),
        L=len(used),
        parent_ids=ids,
    )


def load_dataset(responses, q_matrix, hierarchy=None) -> Dataset:
    """Load the canonical CSV trio into an immutable :class:`Dataset`."""
    maps = IdMaps()
    logs = load_responses(responses, maps)
    q = load_qmatrix(q_matrix, maps)
    h = load_hierarchy(hierarchy, maps) if hierarchy is not None else None
    return Dataset(
        student_ids=tuple(maps.students.ids),
        exercise_ids=tuple(maps.exercises.ids),
        concept_ids=tuple(maps.concepts.ids),
        logs=tuple(logs),
        q=q,
        hierarchy=h,
    )


def write_dataset(d: Dataset, out_dir) -> dict[str, Path]:
    """Write the canonical CSVs for ``d``; returns the written paths by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "responses": out_dir / "responses.csv",
        "q_matrix": out_dir / "q_matrix.csv",
    }
    with open(paths["responses"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "exercise_id", "score"])
        for log in d.logs:
            w.writerow([d.student_ids[log.student_index], d.exercise_ids[log.exercise_index], log.score])
    with open(paths["q_matrix"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exercise_id", "concept_id"])
        for k, j in sorted(d.q.pairs, key=lambda p: (p[1], p[0])):
            w.writerow([d.exercise_ids[j], d.concept_ids[k]])
    if d.hierarchy is not None:
        paths["hierarchy"] = out_dir / "hierarchy.csv"
        with open(paths["hierarchy"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["child_concept_id", "parent_concept_id"])
            for k, p in enumerate(d.hierarchy.parent_of):
                w.writerow([d.concept_ids[k], d.hierarchy.parent_ids[p]])
    return paths


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda t: (-(quotas[t] - counts[t]), t))
    for t in order[: n - sum(counts)]:
        counts[t] += 1
    return counts


def split_dataset(logs: Sequence[ResponseLog], ratios=(0.7, 0.1, 0.2), seed: int = 0) -> Split:
    """Per-student seeded shuffle, then proportional train/valid/test assignment.

    Students with fewer than three logs go entirely to train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    by_student: dict[int, list[ResponseLog]] = {}
    for log in logs:
        by_student.setdefault(log.student_index, []).append(log)

    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for s in sorted(by_student):
        group = by_student[s]
        if len(group) < 3:
            parts[0].extend(group)
            continue
        perm = rng.permutation(len(group))
        group = [group[p] for p in perm]
        n_train, n_valid, _ = _largest_remainder(len(group), ratios)
        n_train = max(1, n_train)
        n_valid = min(n_valid, len(group) - n_train)
        parts[0].extend(group[:n_train])
        parts[1].extend(group[n_train:n_train + n_valid])
        parts[2].extend(group[n_train + n_valid:])
    return Split(tuple(parts[0]), tuple(parts[1]), tuple(parts[2]))


@dataclass(frozen=True)
class DatasetStats:
    students: int
    exercises: int
    concepts: int
    parents: Optional[int]
    logs: int
    logs_per_student: float
    logs_per_exercise: float

    def as_row(self) -> dict:
        return {
            "students": self.students,
            "exercises": self.exercises,
            "concepts": self.concepts,
            "parents": "/" if self.parents is None else self.parents,
            "logs": self.logs,
            "logs_per_student": f"{self.logs_per_student:.2f}",
            "logs_per_exercise": f"{self.logs_per_exercise:.2f}",
        }


def dataset_stats(d: Dataset) -> DatasetStats:
    n = len(d.logs)
    return DatasetStats(
        students=d.N,
        exercises=d.M,
        concepts=d.K,
        parents=d.L,
        logs=n,
        logs_per_student=round(n / d.N, 2),
        logs_per_exercise=round(n / d.M, 2),
    )


def log_arrays(logs: Sequence[ResponseLog]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Columnar (student, exercise, score) int arrays for a list of logs."""
    if not logs:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    arr = np.asarray([(l.student_index, l.exercise_index, l.score) for l in logs], dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()
