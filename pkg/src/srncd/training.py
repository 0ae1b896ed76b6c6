"""Loss, mini-batch training with projected Adam, early stopping, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset, QMatrix, Split, log_arrays
from .diagnet import ConfigError, DiagNet, ModelSpec, Variant
from .metrics import accuracy, auc
from .numerics import AdamState, ParamTensor, adam_step

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
MAGIC = b"SRNCD1"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def bce_loss(y, y_hat):
    """Elementwise negative log-likelihood of binary labels (non-negative, minimised).

    Probabilities are clamped to [1e-7, 1 - 1e-7].
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_logit_grad(y, y_hat):
    """d(bce_loss)/d(logit) where y_hat = sigmoid(logit); zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    inside = (y_hat > PROB_CLAMP) & (y_hat < 1.0 - PROB_CLAMP)
    return np.where(inside, y_hat - y, 0.0)


@dataclass
class TrainConfig:
    variant: Variant = Variant.SR_NCD
    epochs: int = 50
    batch_size: int = 256
    lr: float = 2e-3
    seed: int = 0
    hidden_dims: tuple[int, ...] = (512, 256)
    d_override: Optional[int] = None
    eq6_sign: str = "h_minus_beta"
    early_stop_patience: int = 5
    dropout: float = 0.0
    max_steps: Optional[int] = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    def echo(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_acc: Optional[float]
    valid_auc: Optional[float]


@dataclass
class TrainResult:
    model: DiagNet
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    steps: int = 0


def build_model(dataset: Dataset, cfg: TrainConfig, dtype=np.float32) -> DiagNet:
    if cfg.variant.needs_hierarchy and dataset.hierarchy is None:
        raise ConfigError(f"variant {cfg.variant.value} requires a concept hierarchy (hierarchy.csv)")
    spec = ModelSpec(
        variant=cfg.variant, N=dataset.N, M=dataset.M, K=dataset.K, L=dataset.L,
        D=cfg.d_override, hidden_dims=cfg.hidden_dims, eq6_sign=cfg.eq6_sign,
        dropout=cfg.dropout,
    )
    support = dataset.hierarchy.support() if dataset.hierarchy is not None else None
    return DiagNet(spec, dataset.q.dense(), support, seed=cfg.seed, dtype=dtype)


def batch_loss_and_grad(model: DiagNet, s, e, y, rng=None) -> float:
    """Mean batch loss; leaves the gradients of that mean in ``model.params``."""
    model.zero_grad()
    y_hat, cache = model.forward(s, e, rng)
    loss = float(bce_loss(y, y_hat).mean())
    model.backward(cache, bce_logit_grad(y, y_hat) / len(y))
    return loss


def evaluate_logs(model: DiagNet, logs) -> tuple[Optional[float], Optional[float], np.ndarray, np.ndarray]:
    s, e, y = log_arrays(logs)
    if len(y) == 0:
        return None, None, y, np.zeros(0)
    y_hat = model.predict(s, e)
    return accuracy(y, y_hat), auc(y, y_hat), y, y_hat


def _snapshot(model: DiagNet) -> dict[str, np.ndarray]:
    return {k: p.value.copy() for k, p in model.params.items()}


def train(dataset: Dataset, split: Split, cfg: TrainConfig) -> TrainResult:
    """Fit a model on ``split.train``; keeps the epoch with the best validation AUC."""
    if not split.train:
        raise TrainingError("empty training set")
    model = build_model(dataset, cfg)
    states = {k: AdamState.for_param(p, lr=cfg.lr) for k, p in model.params.items()}
    rng = np.random.default_rng([cfg.seed, 1])
    s_all, e_all, y_all = log_arrays(split.train)
    n = len(y_all)

    result = TrainResult(model)
    best_auc, best_params, stale = -np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            loss = batch_loss_and_grad(model, s_all[idx], e_all[idx], y_all[idx],
                                       rng if cfg.dropout > 0 else None)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {lo}: "
                    f"students {s_all[idx][:5].tolist()}..., exercises {e_all[idx][:5].tolist()}..."
                )
            for k, p in model.params.items():
                adam_step(p, states[k])
            total += loss * len(idx)
            result.steps += 1
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                break
        acc, valid_auc, _, _ = evaluate_logs(model, split.valid)
        rec = EpochRecord(epoch, total / n, acc, valid_auc)
        result.log.append(rec)
        logger.info("epoch %d loss %.5f valid acc %s auc %s", epoch, rec.train_loss, acc, valid_auc)
        if valid_auc is not None:
            if valid_auc > best_auc:
                best_auc, best_params, stale = valid_auc, _snapshot(model), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
        if cfg.max_steps is not None and result.steps >= cfg.max_steps:
            break
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k].value[...] = v
    return result


# ---------------------------------------------------------------- checkpoints

def _id_hash(ids) -> str:
    return hashlib.sha256("\n".join(ids).encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    header: dict
    model: DiagNet

    @property
    def student_ids(self) -> list[str]:
        return self.header["student_ids"]

    @property
    def concept_ids(self) -> list[str]:
        return self.header["concept_ids"]

    @property
    def config(self) -> dict:
        return self.header["config"]


def make_header(model: DiagNet, dataset: Dataset, config: Optional[dict] = None) -> dict:
    s = model.spec
    return {
        "format": "SRNCD1",
        "variant": s.variant.value,
        "N": s.N, "M": s.M, "K": s.K, "L": s.L, "D": s.D,
        "hidden_dims": list(s.hidden_dims),
        "eq6_sign": s.eq6_sign,
        "dropout": s.dropout,
        "id_hashes": {
            "students": _id_hash(dataset.student_ids),
            "exercises": _id_hash(dataset.exercise_ids),
            "concepts": _id_hash(dataset.concept_ids),
        },
        "student_ids": list(dataset.student_ids),
        "exercise_ids": list(dataset.exercise_ids),
        "concept_ids": list(dataset.concept_ids),
        "parent_of": None if dataset.hierarchy is None else list(dataset.hierarchy.parent_of),
        "q_pairs": [list(p) for p in dataset.q.pairs],
        "config": config or {},
        "tensors": [[k, *p.shape] for k, p in model.params.items()],
    }


def _encode(header: dict, model: DiagNet) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(head)), head]
    for name, rows, cols in header["tensors"]:
        v = model.params[name].value
        if v.shape != (rows, cols):
            raise CheckpointError(f"tensor {name} has shape {v.shape}, header says {(rows, cols)}")
        chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: DiagNet, dataset: Dataset, path, config: Optional[dict] = None) -> dict:
    header = make_header(model, dataset, config)
    Path(path).write_bytes(_encode(header, model))
    return header


def resave_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(_encode(ckpt.header, ckpt.model))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not an SRNCD1 checkpoint")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    if len(raw) < off + hlen:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen

    spec = ModelSpec(
        variant=header["variant"], N=header["N"], M=header["M"], K=header["K"],
        L=header["L"], D=header["D"], hidden_dims=tuple(header["hidden_dims"]),
        eq6_sign=header["eq6_sign"], dropout=header["dropout"],
    )
    q = QMatrix(tuple(tuple(p) for p in header["q_pairs"]), K=spec.K, M=spec.M)
    support = None
    if header["parent_of"] is not None and spec.has_parent_block:
        support = np.zeros((spec.K, spec.L), dtype=bool)
        support[np.arange(spec.K), header["parent_of"]] = True

    shapes = DiagNet.param_shapes(spec)
    declared = {name: (r, c) for name, r, c in header["tensors"]}
    if list(declared) != list(shapes) or declared != shapes:
        raise CheckpointError("tensor list does not match the declared architecture")
    expected = sum(r * c for _, r, c in header["tensors"]) * 4
    if len(raw) - off != expected:
        raise CheckpointError(
            f"truncated or oversized payload: {len(raw) - off} bytes, shapes declare {expected}"
        )
    params: dict[str, ParamTensor] = {}
    for name, rows, cols in header["tensors"]:
        n_bytes = rows * cols * 4
        value = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += n_bytes
        params[name] = _constrained(name, value.astype(np.float32), support)
    model = DiagNet(spec, q.dense(), support, params=params)
    return Checkpoint(header, model)


def _constrained(name: str, value: np.ndarray, support) -> ParamTensor:
    if name == "G":
        return ParamTensor(value, nonneg=support.copy(), support=support.copy())
    if name.startswith("W"):
        return ParamTensor(value, nonneg=np.ones(value.shape, dtype=bool))
    return ParamTensor(value)


def check_compatible(ckpt: Checkpoint, dataset: Dataset) -> None:
    """Raise unless ``dataset`` has the dimensions and ids the checkpoint was trained on."""
    h = ckpt.header
    for label, ours, theirs in (("N", h["N"], dataset.N), ("M", h["M"], dataset.M), ("K", h["K"], dataset.K)):
        if ours != theirs:
            raise CheckpointError(f"checkpoint {label}={ours} does not match dataset {label}={theirs}")
    for kind, ids in (("students", dataset.student_ids), ("exercises", dataset.exercise_ids),
                      ("concepts", dataset.concept_ids)):
        if h["id_hashes"][kind] != _id_hash(ids):
            raise CheckpointError(f"checkpoint {kind} ids differ from the dataset's")
