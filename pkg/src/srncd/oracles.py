"""Brute-force reference computations for AUC and DOA on small instances.

Deliberately naive: plain loops over pairs and exercises, no shared code with
``metrics``.
"""

import math


def auc_bruteforce(y, scores):
    pos = [s for t, s in zip(y, scores) if t == 1]
    neg = [s for t, s in zip(y, scores) if t == 0]
    if not pos or not neg:
        return None
    hits = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                hits += 1.0
            elif p == n:
                hits += 0.5
    return hits / (len(pos) * len(neg))


def doa_bruteforce(h, logs, q_rows):
    """h: list of per-student lists (N x K); logs: (student, exercise, score) triples;
    q_rows: per-exercise list of 0/1 over concepts. Returns (mean, per-concept)."""
    n_students = len(h)
    n_concepts = len(h[0]) if h else 0
    answer = {}
    for s, e, y in logs:
        answer[(s, e)] = y
    n_ex = len(q_rows)
    per = []
    for k in range(n_concepts):
        ratios = []
        for i in range(n_students):
            for j in range(n_students):
                if not h[i][k] > h[j][k]:
                    continue
                num = 0
                den = 0
                for l in range(n_ex):
                    if not q_rows[l][k]:
                        continue
                    if (i, l) not in answer or (j, l) not in answer:
                        continue
                    yi, yj = answer[(i, l)], answer[(j, l)]
                    if yi > yj:
                        num += 1
                    if yi != yj:
                        den += 1
                if den > 0:
                    ratios.append(num / den)
        per.append(math.fsum(ratios) / len(ratios) if ratios else None)
    defined = [v for v in per if v is not None]
    return (math.fsum(defined) / len(defined) if defined else None), per
