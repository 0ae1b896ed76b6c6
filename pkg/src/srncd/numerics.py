"""Dense elementwise/affine kernels with analytic backward rules, Adam, projection.

Parameters are stored as 32-bit arrays (or 64-bit in gradient checks); every
product and reduction accumulates in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

EXP_CLAMP = 88.0


def sigmoid(x):
    """Logistic function with the exponent clamped to +-88 (finite in float32)."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    xc = np.clip(x.astype(np.float64, copy=False), -EXP_CLAMP, EXP_CLAMP)
    return (1.0 / (1.0 + np.exp(-xc))).astype(dtype, copy=False)


def affine(W, x, b, batch: Optional[bool] = None):
    """``W @ x + b`` for a column ``x`` (D x 1) or a batch of rows.

    Column form: W (K, D), x (D, 1), b (K, 1) -> (K, 1).
    Batch form: W (K, D), x (B, D), b (K, 1) -> (B, K).
    ``batch=None`` infers the form from the shapes; a (1, 1) ``x`` against a
    one-column ``W`` is then read as a column, so callers holding batches pass
    ``batch=True``.
    """
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if b.shape != (W.shape[0], 1):
        raise ValueError(f"bias shape {b.shape} does not match W {W.shape}")
    W64 = W.astype(np.float64, copy=False)
    x64 = x.astype(np.float64, copy=False)
    if not batch and x.ndim == 2 and x.shape[1] == 1 and x.shape[0] == W.shape[1]:
        return W64 @ x64 + b
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"shape mismatch: W {W.shape} vs x {x.shape}")
    return x64 @ W64.T + b.T


def backward_affine(W, x, g, batch: Optional[bool] = None):
    """Gradients of ``affine`` for upstream ``g``; returns (dW, dx, db).

    Column form: dW = g x^T, dx = W^T g, db = g.  Batch form sums dW/db over rows.
    """
    W64 = np.asarray(W, dtype=np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    g64 = np.asarray(g, dtype=np.float64)
    if not batch and x64.shape[1] == 1 and g64.shape == (W64.shape[0], 1):
        return g64 @ x64.T, W64.T @ g64, g64.copy()
    return g64.T @ x64, g64 @ W64, g64.sum(axis=0)[:, None]


def backward_sigmoid(s, g):
    """Given the forward output ``s = sigmoid(x)`` and upstream ``g``: g * s * (1 - s)."""
    s = np.asarray(s, dtype=np.float64)
    return np.asarray(g, dtype=np.float64) * s * (1.0 - s)


def backward_hadamard(a, b, g):
    """Product rule for ``a * b``: returns (g * b, g * a)."""
    g = np.asarray(g, dtype=np.float64)
    return g * b, g * a


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


@dataclass
class ParamTensor:
    """A trainable array plus gradient buffer and optional constraint masks.

    ``nonneg`` marks entries projected onto [0, inf) after each step; ``support``
    marks the entries allowed to be non-zero at all (None = every entry).
    """

    value: np.ndarray
    nonneg: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value)
        if self.value.ndim != 2:
            raise ValueError("parameters are 2-D")
        for m in (self.nonneg, self.support):
            if m is not None and m.shape != self.value.shape:
                raise ValueError("mask shape differs from value shape")
        self.grad = np.zeros(self.value.shape, dtype=np.float64)
        self.project()

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def project(self):
        if self.nonneg is not None:
            np.copyto(self.value, np.maximum(self.value, 0), where=self.nonneg)
        if self.support is not None:
            self.value[~self.support] = 0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, p: ParamTensor, **kw) -> "AdamState":
        return cls(np.zeros(p.shape, dtype=np.float64), np.zeros(p.shape, dtype=np.float64), **kw)


def adam_step(p: ParamTensor, s: AdamState) -> None:
    """One bias-corrected Adam update of ``p`` in place, followed by projection."""
    g = p.grad
    if p.support is not None:
        g = np.where(p.support, g, 0.0)
    s.t += 1
    s.m *= s.beta1
    s.m += (1.0 - s.beta1) * g
    s.v *= s.beta2
    s.v += (1.0 - s.beta2) * g * g
    m_hat = s.m / (1.0 - s.beta1 ** s.t)
    v_hat = s.v / (1.0 - s.beta2 ** s.t)
    step = s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    p.value[...] = (p.value.astype(np.float64) - step).astype(p.value.dtype)
    p.project()


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, ParamTensor],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-3,
    n_coords: int = 50,
    seed: int = 0,
) -> dict[str, float]:
    """Compare analytic gradients with central differences, per parameter group.

    ``loss_fn`` re-evaluates the loss from the current parameter values (which are
    perturbed in place and restored). Coordinates are sampled uniformly among the
    trainable entries of each group. Returns the max of
    ``|analytic - numeric| / max(1, |numeric|)`` per group.
    """
    if not 1e-5 <= h <= 1e-2:
        raise ValueError("h must lie in [1e-5, 1e-2]")
    rng = np.random.default_rng(seed)
    base = loss_fn()
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite")
    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        allowed = np.flatnonzero(p.support.reshape(-1)) if p.support is not None else np.arange(flat.size)
        if allowed.size == 0:
            continue
        picks = rng.choice(allowed, size=min(n_coords, allowed.size), replace=False)
        g = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        worst = 0.0
        for c in picks:
            orig = flat[c]
            flat[c] = orig + h
            up = loss_fn()
            flat[c] = orig - h
            down = loss_fn()
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"loss is not finite when perturbing {name}[{c}]")
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, abs(g[c] - numeric) / max(1.0, abs(numeric)))
        errors[name] = worst
    return errors
