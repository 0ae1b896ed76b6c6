"""SR-NCD model family: student representation and the monotone prediction head."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .numerics import ParamTensor, affine, backward_affine, backward_sigmoid, sigmoid, xavier_bound


class Variant(str, enum.Enum):
    EMB_NCD = "EMB_NCD"
    PK_NCD = "PK_NCD"
    SR_NCD = "SR_NCD"
    NCD_BASELINE = "NCD_BASELINE"
    MIRT_DEGENERATE = "MIRT_DEGENERATE"

    @property
    def needs_hierarchy(self) -> bool:
        return self in (Variant.PK_NCD, Variant.SR_NCD)

    @property
    def direct(self) -> bool:
        return self in (Variant.NCD_BASELINE, Variant.MIRT_DEGENERATE)


class ConfigError(ValueError):
    """Inconsistent model or training configuration."""


EQ6_SIGNS = ("h_minus_beta", "beta_minus_h")


def default_embedding_dim(K: int) -> int:
    return max(1, K // 4)


@dataclass
class ModelSpec:
    """Shape and architecture of one model instance."""

    variant: Variant
    N: int
    M: int
    K: int
    L: Optional[int] = None
    D: Optional[int] = None
    hidden_dims: tuple[int, ...] = (512, 256)
    eq6_sign: str = "h_minus_beta"
    dropout: float = 0.0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.variant.needs_hierarchy and not self.L:
            raise ConfigError(f"variant {self.variant.value} requires a concept hierarchy")
        if self.eq6_sign not in EQ6_SIGNS:
            raise ConfigError(f"eq6_sign must be one of {EQ6_SIGNS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.D is None:
            self.D = default_embedding_dim(self.K)
        if self.variant is Variant.MIRT_DEGENERATE:
            self.hidden_dims = ()
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    @property
    def layer_dims(self) -> list[int]:
        return [self.K, *self.hidden_dims, 1]

    @property
    def has_parent_block(self) -> bool:
        return bool(self.L) and not self.variant.direct

    @property
    def has_embedding_block(self) -> bool:
        return not self.variant.direct


@dataclass
class Cache:
    students: np.ndarray
    exercises: np.ndarray
    h: np.ndarray
    h_p: Optional[np.ndarray] = None
    h_e: Optional[np.ndarray] = None
    x_p: Optional[np.ndarray] = None
    x_e: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    acts: list = field(default_factory=list)
    drops: list = field(default_factory=list)
    y_hat: Optional[np.ndarray] = None


class DiagNet:
    """Parameters plus batched forward/backward for one variant.

    ``q_dense`` is the (M, K) exercise-major Q-matrix; ``support`` the (K, L)
    hierarchy mask of the parent-child map. Parameters live in ``self.params`` in
    canonical order (the checkpoint order).
    """

    def __init__(self, spec: ModelSpec, q_dense, support=None, seed: int = 0,
                 dtype=np.float32, params: Optional[dict] = None):
        self.spec = spec
        self.q = np.asarray(q_dense, dtype=np.float64)
        if self.q.shape != (spec.M, spec.K):
            raise ConfigError(f"Q-matrix shape {self.q.shape} does not match M={spec.M}, K={spec.K}")
        if spec.has_parent_block:
            if support is None:
                raise ConfigError("hierarchy support mask required")
            support = np.asarray(support, dtype=bool)
            if support.shape != (spec.K, spec.L):
                raise ConfigError(f"support shape {support.shape} != ({spec.K}, {spec.L})")
        self.support = support
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: dict[str, ParamTensor] = params

    # ------------------------------------------------------------------ init
    def _init_params(self, rng) -> dict[str, ParamTensor]:
        s, dt = self.spec, self.dtype
        out: dict[str, ParamTensor] = {}

        def emb(rows, cols):
            return rng.uniform(-1.0, 1.0, size=(rows, cols)).astype(dt)

        if s.has_parent_block:
            a = xavier_bound(s.L, s.K)
            out["x_p"] = ParamTensor(emb(s.N, s.L))
            out["G"] = ParamTensor(rng.uniform(0.0, a, size=(s.K, s.L)).astype(dt),
                                   nonneg=self.support.copy(), support=self.support.copy())
            out["b_p"] = ParamTensor(np.zeros((s.K, 1), dtype=dt))
        if s.has_embedding_block:
            a = xavier_bound(s.D, s.K)
            out["x_e"] = ParamTensor(emb(s.N, s.D))
            out["F"] = ParamTensor(rng.uniform(-a, a, size=(s.K, s.D)).astype(dt))
            out["b_e"] = ParamTensor(np.zeros((s.K, 1), dtype=dt))
        if s.variant.direct:
            out["x_direct"] = ParamTensor(emb(s.N, s.K))
        out["x_a"] = ParamTensor(emb(s.M, s.K))
        out["x_b"] = ParamTensor(emb(s.M, s.K))
        dims = s.layer_dims
        for n in range(len(dims) - 1):
            fan_in, fan_out = dims[n], dims[n + 1]
            a = xavier_bound(fan_in, fan_out)
            W = rng.uniform(0.0, a, size=(fan_out, fan_in))
            # layers fed by sigmoid outputs (mean ~0.5) get a centering bias so
            # the non-negative weights do not saturate the head at init
            b = np.zeros((fan_out, 1)) if n == 0 else -0.5 * W.sum(axis=1, keepdims=True)
            out[f"W{n}"] = ParamTensor(W.astype(dt), nonneg=np.ones((fan_out, fan_in), dtype=bool))
            out[f"b{n}"] = ParamTensor(b.astype(dt))
        return out

    @staticmethod
    def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
        """Canonical parameter names and shapes for ``spec``."""
        out: dict[str, tuple[int, int]] = {}
        if spec.has_parent_block:
            out.update(x_p=(spec.N, spec.L), G=(spec.K, spec.L), b_p=(spec.K, 1))
        if spec.has_embedding_block:
            out.update(x_e=(spec.N, spec.D), F=(spec.K, spec.D), b_e=(spec.K, 1))
        if spec.variant.direct:
            out["x_direct"] = (spec.N, spec.K)
        out.update(x_a=(spec.M, spec.K), x_b=(spec.M, spec.K))
        dims = spec.layer_dims
        for n in range(len(dims) - 1):
            out[f"W{n}"] = (dims[n + 1], dims[n])
            out[f"b{n}"] = (dims[n + 1], 1)
        return out

    @property
    def n_layers(self) -> int:
        return len(self.spec.layer_dims) - 1

    def value(self, name) -> np.ndarray:
        return self.params[name].value

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # --------------------------------------------------------- representation
    def parent_proficiency(self, students) -> np.ndarray:
        if not self.spec.has_parent_block:
            raise ConfigError("parent proficiency needs a concept hierarchy")
        x = self.value("x_p")[np.asarray(students)]
        return sigmoid(affine(self.value("G"), x, self.value("b_p"), batch=True))

    def embedding_proficiency(self, students) -> np.ndarray:
        if not self.spec.has_embedding_block:
            raise ConfigError(f"{self.spec.variant.value} has no student embedding")
        x = self.value("x_e")[np.asarray(students)]
        return sigmoid(affine(self.value("F"), x, self.value("b_e"), batch=True))

    def _represent(self, students, cache: Cache) -> np.ndarray:
        v = self.spec.variant
        if v.direct:
            h = sigmoid(self.value("x_direct")[students].astype(np.float64))
        elif v is Variant.EMB_NCD:
            h = cache.h_e = self.embedding_proficiency(students)
        elif v is Variant.PK_NCD:
            h = cache.h_p = self.parent_proficiency(students)
        else:
            cache.h_p = self.parent_proficiency(students)
            cache.h_e = self.embedding_proficiency(students)
            h = fuse_proficiency(cache.h_p, cache.h_e)
        cache.h = h
        return h

    def student_proficiency(self, students=None) -> np.ndarray:
        """(B, K) proficiency in (0, 1); all students when ``students`` is None."""
        if students is None:
            students = np.arange(self.spec.N)
        students = np.atleast_1d(np.asarray(students, dtype=np.int64))
        return self._represent(students, Cache(students, students, None))

    # ---------------------------------------------------------------- forward
    def interaction(self, h, exercises, cache: Optional[Cache] = None) -> np.ndarray:
        q = self.q[exercises]
        alpha = sigmoid(self.value("x_a")[exercises].astype(np.float64))
        beta = sigmoid(self.value("x_b")[exercises].astype(np.float64))
        if cache is not None:
            cache.q, cache.alpha, cache.beta = q, alpha, beta
        gap = h - beta if self.spec.eq6_sign == "h_minus_beta" else beta - h
        return q * alpha * gap

    def head(self, z, cache: Optional[Cache] = None, rng=None) -> np.ndarray:
        """Non-negative MLP; returns the pre-sigmoid output logit, shape (B,)."""
        a = z
        if cache is not None:
            cache.acts = [z]
            cache.drops = []
        last = self.n_layers - 1
        for n in range(self.n_layers):
            u = affine(self.value(f"W{n}"), a, self.value(f"b{n}"), batch=True)
            if n == last:
                return u[:, 0]
            a = sigmoid(u)
            mask = None
            if rng is not None and self.spec.dropout > 0:
                keep = 1.0 - self.spec.dropout
                mask = (rng.random(a.shape) < keep) / keep
            if cache is not None:
                cache.acts.append(a)
                cache.drops.append(mask)
            if mask is not None:
                a = a * mask
        raise AssertionError("unreachable")

    def forward(self, students, exercises, rng=None) -> tuple[np.ndarray, Cache]:
        """Batch prediction; ``rng`` enables dropout (training mode)."""
        students = np.asarray(students, dtype=np.int64)
        exercises = np.asarray(exercises, dtype=np.int64)
        cache = Cache(students, exercises, None)
        h = self._represent(students, cache)
        z = self.interaction(h, exercises, cache)
        logit = self.head(z, cache, rng)
        cache.y_hat = sigmoid(logit)
        return cache.y_hat, cache

    def predict(self, students, exercises) -> np.ndarray:
        return self.forward(students, exercises)[0]

    def predict_from_proficiency(self, h, exercises) -> np.ndarray:
        """Prediction with an explicit (B, K) proficiency, bypassing the student block."""
        exercises = np.asarray(exercises, dtype=np.int64)
        return sigmoid(self.head(self.interaction(np.asarray(h, dtype=np.float64), exercises)))

    # --------------------------------------------------------------- backward
    def backward(self, cache: Cache, dlogit) -> None:
        """Accumulate parameter gradients given d(loss)/d(output logit), shape (B,)."""
        P = self.params
        g = np.asarray(dlogit, dtype=np.float64)[:, None]
        last = self.n_layers - 1
        for n in range(last, -1, -1):
            a_in = cache.acts[n]
            if n > 0 and cache.drops[n - 1] is not None:
                a_in = a_in * cache.drops[n - 1]
            dW, da, db = backward_affine(self.value(f"W{n}"), a_in, g, batch=True)
            P[f"W{n}"].grad += dW
            P[f"b{n}"].grad += db
            if n > 0:
                if cache.drops[n - 1] is not None:
                    da = da * cache.drops[n - 1]
                g = backward_sigmoid(cache.acts[n], da)
            else:
                g = da
        dz = g
        sign = 1.0 if self.spec.eq6_sign == "h_minus_beta" else -1.0
        q, alpha, beta = cache.q, cache.alpha, cache.beta
        gap = sign * (cache.h - beta)
        dh = dz * q * alpha * sign
        dalpha = dz * q * gap
        dbeta = -dh
        kernels.scatter_add_rows(P["x_a"].grad, cache.exercises, backward_sigmoid(alpha, dalpha))
        kernels.scatter_add_rows(P["x_b"].grad, cache.exercises, backward_sigmoid(beta, dbeta))

        v = self.spec.variant
        if v.direct:
            kernels.scatter_add_rows(P["x_direct"].grad, cache.students, backward_sigmoid(cache.h, dh))
            return
        if v is Variant.SR_NCD:
            self._backward_block("x_p", "G", "b_p", cache.h_p, 0.5 * dh, cache.students)
            self._backward_block("x_e", "F", "b_e", cache.h_e, 0.5 * dh, cache.students)
        elif v is Variant.PK_NCD:
            self._backward_block("x_p", "G", "b_p", cache.h_p, dh, cache.students)
        else:
            self._backward_block("x_e", "F", "b_e", cache.h_e, dh, cache.students)

    def _backward_block(self, x_name, w_name, b_name, h, dh, students):
        P = self.params
        du = backward_sigmoid(h, dh)
        x = self.value(x_name)[students]
        dW, dx, db = backward_affine(self.value(w_name), x, du, batch=True)
        if P[w_name].support is not None:
            dW = dW * P[w_name].support
        P[w_name].grad += dW
        P[b_name].grad += db
        kernels.scatter_add_rows(P[x_name].grad, students, dx)


def fuse_proficiency(h_p, h_e):
    """Mean of the parent-derived and embedding-derived proficiencies."""
    return (np.asarray(h_p, dtype=np.float64) + np.asarray(h_e, dtype=np.float64)) / 2.0
