import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from srncd.synthcohort import SynthConfig, generate  # noqa: E402


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def tiny_files(tmp_path):
    """Three students, three exercises, three concepts under two parents."""
    r = write_csv(tmp_path / "responses.csv", ["student_id", "exercise_id", "score"],
                  [("s1", "e1", 1), ("s1", "e2", 0), ("s2", "e1", 1), ("s2", "e3", 0),
                   ("s3", "e2", 1), ("s3", "e3", 1)])
    q = write_csv(tmp_path / "q_matrix.csv", ["exercise_id", "concept_id"],
                  [("e1", "c1"), ("e1", "c2"), ("e2", "c2"), ("e3", "c3")])
    h = write_csv(tmp_path / "hierarchy.csv", ["child_concept_id", "parent_concept_id"],
                  [("c1", "p1"), ("c2", "p1"), ("c3", "p2")])
    return r, q, h


@pytest.fixture(scope="session")
def small_cohort():
    return generate(SynthConfig(n_students=20, n_exercises=24, n_concepts=8, n_parents=3,
                                concepts_per_exercise=(1, 2), logs_per_student=(8, 14), seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
