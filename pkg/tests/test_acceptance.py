"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed
in the pytest terminal summary (see ``conftest.pytest_terminal_summary``).

Tolerances are pinned here and are not tuned per run.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from srncd.cli import grad_check, main
from srncd.dataset import ResponseLog, load_dataset, split_dataset
from srncd.diagnet import Variant
from srncd.metrics import auc, doa
from srncd.numerics import AdamState, adam_step
from srncd.oracles import auc_bruteforce, doa_bruteforce
from srncd.synthcohort import SynthConfig, generate
from srncd.training import (
    TrainConfig, batch_loss_and_grad, build_model, evaluate_logs, load_checkpoint, train,
)

GRAD_TOL = 1e-4
GRAD_SECONDS = 60.0
FUZZ_STEPS = 1000
MONO_TRIALS = 10_000
MONO_SLACK = 1e-7
ORACLE_INSTANCES = 100
RECOVERY_DOA_GAP = 0.10
RECOVERY_AUC_GAP = 0.15
RECOVERY_SECONDS = 300.0
ORDERING_SLACK = 0.01
HIDDEN = (128, 64)
N_RANDOM_H = 10
N_FRESH = 5
ASSIST_TARGETS = {
    "EMB_NCD": {"acc": (0.735, 0.02), "auc": (0.771, 0.02), "doa": (0.681, 0.04)},
    "NCD_BASELINE": {"acc": (0.726, 0.02), "auc": (0.757, 0.02)},
}

RESULTS: dict[int, str] = {}


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    return ok


def chance_controls(ds, split, variant=Variant.SR_NCD):
    """Mean DOA of random proficiency matrices and mean AUC of untrained models on the test logs."""
    q = ds.q.dense()
    rnd = np.mean([doa(np.random.default_rng(100 + r).random((ds.N, ds.K)), split.test, q)[0]
                   for r in range(N_RANDOM_H)])
    fresh = np.mean([evaluate_logs(build_model(ds, TrainConfig(seed=100 + k, variant=variant, hidden_dims=HIDDEN)),
                                   split.test)[1] for k in range(N_FRESH)])
    return float(rnd), float(fresh)


def fit(ds, split, variant):
    res = train(ds, split, TrainConfig(seed=0, variant=variant, hidden_dims=HIDDEN))
    _, test_auc, _, _ = evaluate_logs(res.model, split.test)
    test_doa = doa(res.model.student_proficiency(), split.test, ds.q.dense())[0]
    return res.model, test_auc, test_doa


@pytest.fixture(scope="module")
def cohort0():
    t0 = time.perf_counter()
    ds, gt = generate(SynthConfig(seed=0))
    split = split_dataset(ds.logs, seed=0)
    return ds, split, time.perf_counter() - t0


@pytest.fixture(scope="module")
def recovery(cohort0):
    ds, split, gen_seconds = cohort0
    t0 = time.perf_counter()
    model, test_auc, test_doa = fit(ds, split, Variant.SR_NCD)
    seconds = gen_seconds + time.perf_counter() - t0
    return model, test_auc, test_doa, seconds


def test_c1_gradient_check():
    t0 = time.perf_counter()
    res = grad_check([v.value for v in Variant], [0, 1, 2], n_coords=50)
    seconds = time.perf_counter() - t0
    worst_key = max(res, key=lambda k: max(res[k].values()))
    worst = max(res[worst_key].values())
    ok = worst < GRAD_TOL and seconds < GRAD_SECONDS and len(res) == 15
    assert record(1, ok, f"worst rel err {worst:.2e} ({worst_key[0]} seed {worst_key[1]}) "
                         f"< {GRAD_TOL:g} over {len(res)} runs in {seconds:.1f}s")


def test_c2_constraint_fuzz():
    ds, _ = generate(SynthConfig(n_students=60, n_exercises=80, n_concepts=20, n_parents=5,
                                 concepts_per_exercise=(1, 3), logs_per_student=(20, 40), seed=7))
    rng = np.random.default_rng(2024)
    worst_neg, off_support_max = np.inf, 0.0
    models = [build_model(ds, TrainConfig(variant=v, hidden_dims=(32, 16), seed=3)) for v in Variant]
    for m in models:
        states = {k: AdamState.for_param(p, lr=0.05) for k, p in m.params.items()}
        for _ in range(FUZZ_STEPS // len(models)):
            idx = rng.integers(0, len(ds.logs), size=int(rng.integers(1, 64)))
            s = np.array([ds.logs[t].student_index for t in idx])
            e = np.array([ds.logs[t].exercise_index for t in idx])
            y = rng.integers(0, 2, size=len(idx))  # adversarial labels
            batch_loss_and_grad(m, s, e, y)
            for k, p in m.params.items():
                adam_step(p, states[k])
            for p in m.params.values():
                if p.nonneg is not None:
                    worst_neg = min(worst_neg, float(p.value[p.nonneg].min()))
                if p.support is not None:
                    off = p.value[~p.support]
                    off_support_max = max(off_support_max, float(np.abs(off).max()) if off.size else 0.0)
    ok = worst_neg >= 0.0 and off_support_max == 0.0
    assert record(2, ok, f"{FUZZ_STEPS} steps over {len(models)} variants: min nonneg entry {worst_neg:.3g}, "
                         f"max |off-support G| {off_support_max:g}")


def test_c3_monotonicity(recovery, cohort0):
    model = recovery[0]
    ds = cohort0[0]
    rng = np.random.default_rng(31)
    h_all = model.student_proficiency()
    q = ds.q.dense()
    worst = 0.0
    i = rng.integers(0, ds.N, size=MONO_TRIALS)
    j = rng.integers(0, ds.M, size=MONO_TRIALS)
    h = h_all[i]
    h2 = h.copy()
    for t in range(MONO_TRIALS):
        k = rng.choice(np.flatnonzero(q[j[t]] > 0))
        h2[t, k] = h[t, k] + rng.uniform(0, 1.0 - h[t, k])
    drop = model.predict_from_proficiency(h, j) - model.predict_from_proficiency(h2, j)
    worst = float(drop.max())
    ok = worst <= MONO_SLACK
    assert record(3, ok, f"{MONO_TRIALS} trials on trained SR_NCD: largest decrease {max(worst, 0.0):.2e} "
                         f"(allowed {MONO_SLACK:g})")


def test_c4_metric_oracles():
    rng = np.random.default_rng(4)
    auc_ok = doa_ok = 0
    for _ in range(ORACLE_INSTANCES):
        n, m, k = int(rng.integers(2, 31)), int(rng.integers(1, 21)), int(rng.integers(1, 6))
        h = rng.random((n, k))
        if rng.random() < 0.3:
            h = np.round(h * 4) / 4  # exercise the tie rule
        qd = (rng.random((m, k)) < 0.4).astype(np.float32)
        qd[np.arange(m), rng.integers(0, k, size=m)] = 1
        logs = [(a, b, int(rng.integers(0, 2))) for a in range(n) for b in range(m) if rng.random() < 0.6]
        ours = doa(h, [ResponseLog(*t) for t in logs], qd, sample_cap=None)
        doa_ok += ours == doa_bruteforce(h.tolist(), logs, qd.tolist())
        y = [t[2] for t in logs] or [0]
        scores = np.round(rng.random(len(y)) * 10) / 10
        auc_ok += auc(y, scores) == auc_bruteforce(y, list(scores))
    ok = auc_ok == doa_ok == ORACLE_INSTANCES
    assert record(4, ok, f"exact agreement AUC {auc_ok}/{ORACLE_INSTANCES}, DOA {doa_ok}/{ORACLE_INSTANCES}")


def test_c5_synthetic_recovery(recovery, cohort0):
    _, test_auc, test_doa, seconds = recovery
    ds, split, _ = cohort0
    rnd_doa, fresh_auc = chance_controls(ds, split)
    doa_gap, auc_gap = test_doa - rnd_doa, test_auc - fresh_auc
    ok = doa_gap >= RECOVERY_DOA_GAP and auc_gap >= RECOVERY_AUC_GAP and seconds < RECOVERY_SECONDS
    assert record(5, ok, f"DOA {test_doa:.4f} vs random {rnd_doa:.4f} (gap {doa_gap:.3f} >= {RECOVERY_DOA_GAP}); "
                         f"AUC {test_auc:.4f} vs fresh {fresh_auc:.4f} (gap {auc_gap:.3f} >= {RECOVERY_AUC_GAP}); "
                         f"{seconds:.0f}s")


def _assist_dir():
    d = os.environ.get("SRNCD_ASSIST_DIR")
    if not d:
        return None
    d = Path(d)
    return d if all((d / f).exists() for f in ("responses.csv", "q_matrix.csv")) else None


@pytest.mark.network
def test_c6_assist_reproduction():
    d = _assist_dir()
    if d is None:
        RESULTS[6] = ("criterion 6: SKIP - set SRNCD_ASSIST_DIR to a directory holding the public ASSIST "
                      "data as responses.csv and q_matrix.csv")
        pytest.skip("ASSIST data not available offline")
    ds = load_dataset(d / "responses.csv", d / "q_matrix.csv")
    split = split_dataset(ds.logs, seed=0)
    parts, ok = [], True
    for variant, targets in ASSIST_TARGETS.items():
        res = train(ds, split, TrainConfig(variant=variant, seed=0))
        acc, a, _, _ = evaluate_logs(res.model, split.test)
        got = {"acc": acc, "auc": a}
        if "doa" in targets:
            got["doa"] = doa(res.model.student_proficiency(), split.test, ds.q.dense())[0]
        for key, (target, tol) in targets.items():
            hit = got[key] is not None and abs(got[key] - target) <= tol
            ok &= hit
            parts.append(f"{variant} {key} {got[key]:.3f} ({target}±{tol})")
    assert record(6, ok, "; ".join(parts))


def test_c7_ordering_three_seeds(cohort0, recovery):
    lines, ok = [], True
    for seed in (0, 1, 2):
        if seed == 0:
            ds, split, _ = cohort0
        else:
            ds, _ = generate(SynthConfig(seed=seed))
            split = split_dataset(ds.logs, seed=0)
        metrics = {}
        for v in (Variant.SR_NCD, Variant.EMB_NCD, Variant.PK_NCD):
            if seed == 0 and v is Variant.SR_NCD:
                metrics[v] = recovery[1:3]
            else:
                metrics[v] = fit(ds, split, v)[1:]
        sr_auc = metrics[Variant.SR_NCD][0]
        floor = min(metrics[Variant.EMB_NCD][0], metrics[Variant.PK_NCD][0]) - ORDERING_SLACK
        ok &= sr_auc >= floor
        order = " > ".join(v.value.split("_")[0] for v in sorted(metrics, key=lambda v: -metrics[v][0]))
        lines.append(f"seed {seed} AUC order {order} "
                     + " ".join(f"{v.value.split('_')[0]}={a:.3f}/{d:.3f}" for v, (a, d) in metrics.items()))
    assert record(7, ok, "SR AUC >= min(EMB, PK) - 0.01 on all seeds; " + " | ".join(lines) + " (AUC/DOA)")


def test_c8_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out-dir", str(data), "--n-students", "40", "--n-exercises", "50",
                 "--n-concepts", "12", "--n-parents", "4", "--logs-per-student", "15,30"]) == 0
    common = ["train", "--responses", str(data / "responses.csv"), "--q-matrix", str(data / "q_matrix.csv"),
              "--hierarchy", str(data / "hierarchy.csv"), "--hidden-dims", "32,16", "--epochs", "5",
              "--out-dir"]
    assert main([*common, str(tmp_path / "a")]) == 0
    (tmp_path / "a" / "model.srncd").rename(tmp_path / "first.srncd")
    assert main([*common, str(tmp_path / "a")]) == 0
    same_bytes = (tmp_path / "first.srncd").read_bytes() == (tmp_path / "a" / "model.srncd").read_bytes()

    ck = load_checkpoint(tmp_path / "first.srncd")
    ds = load_dataset(data / "responses.csv", data / "q_matrix.csv", data / "hierarchy.csv")
    split = split_dataset(ds.logs, seed=0)
    res = train(ds, split, TrainConfig(hidden_dims=(32, 16), epochs=5))
    s = np.repeat(np.arange(ds.N), ds.M)
    e = np.tile(np.arange(ds.M), ds.N)
    bit_exact = ck.model.predict(s, e).tobytes() == res.model.predict(s, e).tobytes()
    ok = same_bytes and bit_exact
    assert record(8, ok, f"byte-identical checkpoints: {same_bytes}; reloaded predictions bit-exact "
                         f"over {len(s)} pairs: {bit_exact}")
