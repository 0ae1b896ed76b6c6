import math

import numpy as np
import pytest

from srncd.diagnet import ConfigError, DiagNet, ModelSpec, Variant, fuse_proficiency
from srncd.numerics import AdamState, adam_step, finite_diff_check
from srncd.training import bce_logit_grad, bce_loss

ALL_VARIANTS = list(Variant)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def make_model(cohort, variant, seed=0, hidden=(6, 4), dtype=np.float32, eq6_sign="h_minus_beta"):
    ds, _ = cohort
    spec = ModelSpec(variant, ds.N, ds.M, ds.K, ds.L, hidden_dims=hidden, eq6_sign=eq6_sign)
    return DiagNet(spec, ds.q.dense(), ds.hierarchy.support(), seed=seed, dtype=dtype)


def scalar_forward(model, i, j):
    """Per-element reference built from nested loops over the raw parameters."""
    s, P = model.spec, {k: p.value.astype(np.float64) for k, p in model.params.items()}
    K = s.K

    def block(x, W, b):
        return [_sig(b[k][0] + sum(W[k][d] * x[d] for d in range(len(x)))) for k in range(K)]

    if s.variant.direct:
        h = [_sig(v) for v in P["x_direct"][i]]
    else:
        hp = block(P["x_p"][i], P["G"], P["b_p"]) if s.variant is not Variant.EMB_NCD else None
        he = block(P["x_e"][i], P["F"], P["b_e"]) if s.variant is not Variant.PK_NCD else None
        if hp is None:
            h = he
        elif he is None:
            h = hp
        else:
            h = [(a + b) / 2 for a, b in zip(hp, he)]
    q = model.q[j]
    a = []
    for k in range(K):
        al, be = _sig(P["x_a"][j][k]), _sig(P["x_b"][j][k])
        gap = h[k] - be if s.eq6_sign == "h_minus_beta" else be - h[k]
        a.append(q[k] * al * gap)
    for n in range(model.n_layers):
        W, b = P[f"W{n}"], P[f"b{n}"]
        u = [b[r][0] + sum(W[r][c] * a[c] for c in range(len(a))) for r in range(len(W))]
        a = u if n == model.n_layers - 1 else [_sig(v) for v in u]
    return _sig(a[0])


class TestSpec:
    def test_default_embedding_dim(self):
        assert ModelSpec(Variant.EMB_NCD, 2, 2, 74).D == 18
        assert ModelSpec(Variant.EMB_NCD, 2, 2, 3).D == 1

    def test_hierarchy_required(self):
        with pytest.raises(ConfigError, match="hierarchy"):
            ModelSpec(Variant.SR_NCD, 2, 2, 4)

    def test_mirt_has_no_hidden_layers(self):
        assert ModelSpec(Variant.MIRT_DEGENERATE, 2, 2, 4).layer_dims == [4, 1]

    def test_bad_sign(self):
        with pytest.raises(ConfigError):
            ModelSpec(Variant.EMB_NCD, 2, 2, 4, eq6_sign="plus")

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_param_shapes_match_init(self, small_cohort, variant):
        m = make_model(small_cohort, variant)
        assert {k: p.shape for k, p in m.params.items()} == DiagNet.param_shapes(m.spec)
        assert list(m.params) == list(DiagNet.param_shapes(m.spec))


class TestForward:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    @pytest.mark.parametrize("sign", ["h_minus_beta", "beta_minus_h"])
    def test_against_scalar_loops(self, small_cohort, variant, sign):
        m = make_model(small_cohort, variant, seed=4, eq6_sign=sign)
        s = np.array([0, 3, 7, 19, 3])
        e = np.array([1, 0, 23, 5, 5])
        y_hat = m.predict(s, e)
        ref = [scalar_forward(m, i, j) for i, j in zip(s, e)]
        np.testing.assert_allclose(y_hat, ref, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_prediction_open_interval(self, small_cohort, variant):
        m = make_model(small_cohort, variant)
        ds, _ = small_cohort
        s = np.repeat(np.arange(ds.N), ds.M)
        e = np.tile(np.arange(ds.M), ds.N)
        y = m.predict(s, e)
        assert ((y > 0) & (y < 1)).all()

    def test_parent_proficiency_example(self):
        spec = ModelSpec(Variant.PK_NCD, 1, 1, 2, 1, hidden_dims=(2,))
        m = DiagNet(spec, np.ones((1, 2)), np.array([[True], [True]]))
        m.params["x_p"].value[...] = 1.0
        m.params["G"].value[...] = [[2.0], [0.0]]
        m.params["b_p"].value[...] = 0.0
        np.testing.assert_allclose(m.parent_proficiency([0])[0], [_sig(2.0), 0.5])
        assert m.parent_proficiency([0])[0, 0] == pytest.approx(0.8808, abs=1e-4)

    def test_embedding_proficiency_zero(self):
        spec = ModelSpec(Variant.EMB_NCD, 1, 1, 3, D=2, hidden_dims=(2,))
        m = DiagNet(spec, np.ones((1, 3)))
        m.params["F"].value[...] = 0.0
        assert m.embedding_proficiency([0]).tolist() == [[0.5, 0.5, 0.5]]

    def test_fuse(self):
        assert fuse_proficiency([[0.2, 0.8]], [[0.4, 0.0]]).tolist() == [[0.30000000000000004, 0.4]]

    def test_interaction_example(self):
        spec = ModelSpec(Variant.NCD_BASELINE, 1, 1, 2)
        m = DiagNet(spec, np.array([[1.0, 0.0]]))
        m.params["x_a"].value[...] = 0.0  # alpha = 0.5
        m.params["x_b"].value[...] = 0.0  # beta = 0.5
        z = m.interaction(np.array([[0.9, 0.9]]), np.array([0]))
        np.testing.assert_allclose(z, [[0.2, 0.0]])

    def test_sr_equals_blocks_when_they_agree(self, small_cohort):
        m = make_model(small_cohort, Variant.SR_NCD, dtype=np.float64)
        m.params["x_e"].value[...] = 0.0
        m.params["F"].value[...] = 0.0
        m.params["b_e"].value[...] = 0.0
        m.params["x_p"].value[...] = 0.0
        m.params["b_p"].value[...] = 0.0
        np.testing.assert_array_equal(m.student_proficiency(), 0.5)

    def test_dropout_only_with_rng(self, small_cohort):
        ds, _ = small_cohort
        spec = ModelSpec(Variant.EMB_NCD, ds.N, ds.M, ds.K, hidden_dims=(6, 4), dropout=0.5)
        m = DiagNet(spec, ds.q.dense())
        s, e = np.arange(5), np.arange(5)
        assert np.array_equal(m.predict(s, e), m.predict(s, e))
        y1, _ = m.forward(s, e, np.random.default_rng(0))
        assert not np.array_equal(y1, m.predict(s, e))


class TestMonotonicity:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_raising_proficiency_never_lowers_prediction(self, small_cohort, variant, rng):
        m = make_model(small_cohort, variant, seed=2)
        ds, _ = small_cohort
        for _ in range(300):
            j = int(rng.integers(ds.M))
            h = rng.random((1, ds.K))
            k = int(rng.integers(ds.K))
            h2 = h.copy()
            h2[0, k] = min(1.0, h[0, k] + rng.random())
            before = m.predict_from_proficiency(h, [j])[0]
            after = m.predict_from_proficiency(h2, [j])[0]
            assert after >= before - 1e-12

    def test_reversed_sign_is_antitone(self, small_cohort):
        m = make_model(small_cohort, Variant.EMB_NCD, eq6_sign="beta_minus_h")
        ds, _ = small_cohort
        j = int(np.flatnonzero(m.q.sum(axis=1) > 0)[0])
        lo = m.predict_from_proficiency(np.zeros((1, ds.K)), [j])[0]
        hi = m.predict_from_proficiency(np.ones((1, ds.K)), [j])[0]
        assert hi < lo


class TestGradients:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    @pytest.mark.parametrize("sign", ["h_minus_beta", "beta_minus_h"])
    def test_finite_differences(self, small_cohort, variant, sign):
        ds, _ = small_cohort
        m = make_model(small_cohort, variant, seed=1, dtype=np.float64, eq6_sign=sign)
        s = np.array([log.student_index for log in ds.logs[:40]])
        e = np.array([log.exercise_index for log in ds.logs[:40]])
        y = np.array([log.score for log in ds.logs[:40]])

        def loss():
            return float(bce_loss(y, m.predict(s, e)).mean())

        m.zero_grad()
        y_hat, cache = m.forward(s, e)
        m.backward(cache, bce_logit_grad(y, y_hat) / len(y))
        grads = {k: p.grad.copy() for k, p in m.params.items()}
        errs = finite_diff_check(loss, m.params, grads, h=1e-5, n_coords=30)
        assert max(errs.values()) < 1e-4, errs

    @pytest.mark.parametrize("variant,idle", [(Variant.PK_NCD, ("x_e", "F", "b_e")),
                                              (Variant.EMB_NCD, ("x_p", "G", "b_p"))])
    def test_variant_isolation(self, small_cohort, variant, idle):
        ds, _ = small_cohort
        m = make_model(small_cohort, variant)
        s, e, y = np.arange(10), np.arange(10), np.ones(10)
        m.zero_grad()
        y_hat, cache = m.forward(s, e)
        m.backward(cache, bce_logit_grad(y, y_hat))
        for name in idle:
            if name in m.params:
                assert not m.params[name].grad.any()

    def test_structural_zeros_survive_training(self, small_cohort, rng):
        ds, _ = small_cohort
        m = make_model(small_cohort, Variant.SR_NCD)
        states = {k: AdamState.for_param(p, lr=0.05) for k, p in m.params.items()}
        off = ~ds.hierarchy.support()
        for _ in range(100):
            idx = rng.integers(0, len(ds.logs), size=16)
            s = np.array([ds.logs[t].student_index for t in idx])
            e = np.array([ds.logs[t].exercise_index for t in idx])
            y = np.array([ds.logs[t].score for t in idx])
            m.zero_grad()
            y_hat, cache = m.forward(s, e)
            m.backward(cache, bce_logit_grad(y, y_hat) / len(y))
            for k, p in m.params.items():
                adam_step(p, states[k])
        G = m.params["G"].value
        assert (G[off] == 0).all() and (G >= 0).all()
        for n in range(m.n_layers):
            assert (m.params[f"W{n}"].value >= 0).all()
