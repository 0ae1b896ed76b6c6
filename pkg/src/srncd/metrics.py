"""Evaluation metrics: accuracy, AUC, degree of agreement, proficiency histogram."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .dataset import log_arrays

DEFAULT_SAMPLE_CAP = 1_000_000


def accuracy(y, y_hat) -> float:
    """Fraction of labels matched by thresholding at 0.5 (0.5 itself predicts 1)."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((y_hat >= 0.5).astype(np.int64) == y))


def auc(y, y_hat) -> Optional[float]:
    """Mann-Whitney AUC with ties counted one half; None for single-class input."""
    y = np.asarray(y).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(y_hat, dtype=np.float64))
    # rank sums are half-integers: exact in float64
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _concept_responses(students, exercises, scores, q_dense, k):
    """CSR (over active students) of the responses touching concept ``k``."""
    on_k = q_dense[exercises, k] > 0
    s, e, y = students[on_k], exercises[on_k], scores[on_k]
    order = np.lexsort((e, s))
    s, e, y = s[order], e[order], y[order]
    active, local = np.unique(s, return_inverse=True)
    indptr = np.zeros(len(active) + 1, dtype=np.int64)
    np.cumsum(np.bincount(local, minlength=len(active)), out=indptr[1:])
    return active, indptr, e.astype(np.int64), y.astype(np.int8)


def doa_concept(h_col, students, exercises, scores, q_dense, k,
                sample_cap: Optional[int] = DEFAULT_SAMPLE_CAP, rng=None) -> Optional[float]:
    """DOA for one concept; None when no student pair is comparable."""
    active, indptr, cols, vals = _concept_responses(students, exercises, scores, q_dense, k)
    n = len(active)
    if n < 2:
        return None
    h = np.asarray(h_col, dtype=np.float64)[active]
    n_pairs = n * (n - 1) // 2
    if sample_cap is None or n_pairs <= sample_cap:
        a, b = np.triu_indices(n, k=1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        a = rng.integers(0, n, size=sample_cap)
        b = rng.integers(0, n - 1, size=sample_cap)
        b = b + (b >= a)
    # orient each pair so the first student has the higher proficiency; ties drop
    hi = np.where(h[a] > h[b], a, b)
    lo = np.where(h[a] > h[b], b, a)
    keep = h[a] != h[b]
    hi, lo = hi[keep], lo[keep]
    num, den = kernels.pair_counts(indptr, cols, vals, hi, lo)
    ok = den > 0
    if not ok.any():
        return None
    ratios = num[ok] / den[ok]
    return math.fsum(ratios) / int(ok.sum())


def doa(h, logs_or_arrays, q_dense, sample_cap: Optional[int] = DEFAULT_SAMPLE_CAP,
        seed: int = 0) -> tuple[Optional[float], list[Optional[float]]]:
    """Mean degree of agreement over concepts with a defined value, and the per-concept list.

    ``h`` is the (N, K) proficiency matrix; ``logs_or_arrays`` either ResponseLog
    objects or a (students, exercises, scores) tuple; ``q_dense`` the (M, K)
    exercise-major Q-matrix. Pairs whose students never disagree on the concept's
    shared exercises leave both numerator and normaliser. Above ``sample_cap``
    student pairs per concept, that many pairs are drawn uniformly (seeded).
    """
    if isinstance(logs_or_arrays, tuple) and len(logs_or_arrays) == 3 and isinstance(logs_or_arrays[0], np.ndarray):
        s, e, y = (np.asarray(a, dtype=np.int64) for a in logs_or_arrays)
    else:
        s, e, y = log_arrays(list(logs_or_arrays))
    h = np.asarray(h, dtype=np.float64)
    q_dense = np.asarray(q_dense)
    rng = np.random.default_rng(seed)
    per = [doa_concept(h[:, k], s, e, y, q_dense, k, sample_cap, rng) for k in range(h.shape[1])]
    defined = [v for v in per if v is not None]
    mean = math.fsum(defined) / len(defined) if defined else None
    return mean, per


BIN_EDGES = np.arange(11) / 10.0


@dataclass
class ProficiencyHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def rows(self):
        for n, c in enumerate(self.counts):
            yield float(self.bin_edges[n]), float(self.bin_edges[n + 1]), int(c)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_low", "bin_high", "count"])
            for lo, hi, c in self.rows():
                w.writerow([f"{lo:.1f}", f"{hi:.1f}", c])


def histogram(h) -> ProficiencyHistogram:
    """Ten equal bins over [0, 1], left-closed; 1.0 lands in the last bin."""
    v = np.asarray(h, dtype=np.float64).ravel()
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError("proficiency entries must lie in [0, 1]")
    idx = np.minimum(np.searchsorted(BIN_EDGES, v, side="right") - 1, 9)
    return ProficiencyHistogram(BIN_EDGES.copy(), np.bincount(idx, minlength=10).astype(np.int64))


@dataclass
class EvalReport:
    acc: Optional[float]
    auc: Optional[float]
    doa: Optional[float]
    per_concept_doa: list = field(default_factory=list)
    test_loss: Optional[float] = None
    cold_exercise_count: int = 0
    n_logs: int = 0

    def flat(self) -> dict:
        d = asdict(self)
        d.pop("per_concept_doa")
        return d

    def write(self, out_dir, concept_ids: Optional[Sequence[str]] = None) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "text": out_dir / "report.txt",
            "json": out_dir / "report.json",
            "per_concept": out_dir / "per_concept_doa.csv",
        }
        with open(paths["text"], "w", encoding="utf-8") as fh:
            for k, v in self.flat().items():
                fh.write(f"{k}={'undefined' if v is None else v}\n")
        body = self.flat()
        body["per_concept_doa"] = self.per_concept_doa
        paths["json"].write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(paths["per_concept"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["concept_id", "doa"])
            for k, v in enumerate(self.per_concept_doa):
                cid = concept_ids[k] if concept_ids is not None else str(k)
                w.writerow([cid, "undefined" if v is None else repr(v)])
        return paths
