"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the DOA pair-count kernel and the embedding-gradient scatter-add on
inputs shaped like the default synthetic cohort, and checks both backends
return identical results.
"""

import argparse
import timeit

import numpy as np

from srncd import _pykernels
from srncd.metrics import _concept_responses
from srncd.synthcohort import SynthConfig, generate

try:
    from srncd import _ckernels
except ImportError:
    _ckernels = None


def pair_inputs(n_students=600, seed=0):
    ds, _ = generate(SynthConfig(n_students=n_students, concepts_per_exercise=(1, 3), seed=seed))
    s, e, y = (np.array(c) for c in zip(*((r.student_index, r.exercise_index, r.score) for r in ds.logs)))
    q = ds.q.dense()
    k = int(np.argmax(q.sum(axis=0)))
    active, indptr, cols, vals = _concept_responses(s, e, y, q, k)
    a, b = np.triu_indices(len(active), k=1)
    return indptr, cols, vals, a, b


def scatter_inputs(n_rows=250, width=74, n_items=256 * 40, seed=0):
    rng = np.random.default_rng(seed)
    return n_rows, width, rng.integers(0, n_rows, size=n_items), rng.normal(size=(n_items, width))


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:8s} {best * 1e3:9.2f} ms")
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels not built; timing the numpy backend only")

    indptr, cols, vals, a, b = pair_inputs()
    print(f"pair_counts: {len(a)} student pairs, {len(cols)} responses")
    times, outs = {}, {}
    for name, mod in backends:
        times[name] = bench(name, lambda mod=mod: mod.pair_counts(indptr, cols, vals, a, b), args.repeat)
        outs[name] = mod.pair_counts(indptr, cols, vals, a, b)
    if len(outs) == 2:
        same = all(np.array_equal(x, y) for x, y in zip(outs["python"], outs["cython"]))
        print(f"  identical: {same}; speed-up {times['python'] / times['cython']:.1f}x")

    n_rows, width, idx, rows = scatter_inputs()
    print(f"scatter_add_rows: {len(idx)} rows of width {width} into {n_rows}")
    times, outs = {}, {}
    for name, mod in backends:
        times[name] = bench(name, lambda mod=mod: mod.scatter_add_rows(np.zeros((n_rows, width)), idx, rows),
                            args.repeat)
        outs[name] = mod.scatter_add_rows(np.zeros((n_rows, width)), idx, rows)
    if len(outs) == 2:
        same = outs["python"].tobytes() == outs["cython"].tobytes()
        print(f"  bitwise identical: {same}; speed-up {times['python'] / times['cython']:.1f}x")


if __name__ == "__main__":
    main()
