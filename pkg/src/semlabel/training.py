"""Losses, reverse-mode gradients through the SAGE forward pass, and training."""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ModelError, TrainingDivergedError
from .label_encoding import EncodingTable, decode_nearest_batch, one_hot_table
from .sage_model import DEFAULT_HIDDEN_DIM, ForwardCache, SageModel, forward, init_model

log = logging.getLogger(__name__)

EARLY_STOP_MIN_DELTA = 1e-6


class LossKind(str, enum.Enum):
    COSINE = "cosine"
    SOFTMAX_CE = "softmax_ce"
    SIGMOID_BCE = "sigmoid_bce"

    @property
    def uses_table(self) -> bool:
        return self is LossKind.COSINE


class Optimizer(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: LossKind = LossKind.COSINE
    epochs: int = 300
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    early_stop_patience: int | None = None
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_kind"] = self.loss_kind.value
        d["optimizer"] = self.optimizer.value
        return d


# --- losses ---------------------------------------------------------------

def cosine_embedding_loss(e_p, e_t) -> float:
    """``1 - cos(e_p, e_t)``. A zero prediction scores 1 (no direction)."""
    loss, _ = _cosine_rows(np.atleast_2d(np.asarray(e_p, dtype=np.float64)),
                           np.atleast_2d(np.asarray(e_t, dtype=np.float64)))
    return float(loss[0])


def cosine_loss_grad(e_p, e_t) -> np.ndarray:
    """Gradient of :func:`cosine_embedding_loss` with respect to ``e_p``."""
    _, grad = _cosine_rows(np.atleast_2d(np.asarray(e_p, dtype=np.float64)),
                           np.atleast_2d(np.asarray(e_t, dtype=np.float64)))
    return grad[0]


def _cosine_rows(P: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if P.shape != T.shape:
        raise ValueError(f"prediction shape {P.shape} != target shape {T.shape}")
    nt = np.linalg.norm(T, axis=1)
    if np.any(nt == 0.0):
        raise ValueError("target embedding has zero norm")
    np_ = np.linalg.norm(P, axis=1)
    live = np_ > 0.0
    safe_np = np.where(live, np_, 1.0)
    dot = np.einsum("ij,ij->i", P, T)
    cos = np.clip(dot / (safe_np * nt), -1.0, 1.0)
    loss = np.where(live, 1.0 - cos, 1.0)
    grad = -(T / (safe_np * nt)[:, None] - (dot / (safe_np ** 3 * nt))[:, None] * P)
    grad[~live] = 0.0
    return loss, grad


def softmax_cross_entropy(logits, true_class: int) -> tuple[float, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= true_class < z.shape[-1]:
        raise ValueError(f"class index {true_class} out of range for {z.shape[-1]} logits")
    loss, grad = _softmax_ce_rows(z[None, :], np.array([true_class]))
    return float(loss[0]), grad[0]


def _softmax_ce_rows(Z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - log_norm[:, None]
    rows = np.arange(len(y))
    loss = -logp[rows, y]
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return loss, grad


def sigmoid_binary_cross_entropy(logits, true_class: int) -> tuple[float, np.ndarray]:
    """Per-class sigmoid + binary cross-entropy against a one-hot target, summed over classes."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= true_class < z.shape[-1]:
        raise ValueError(f"class index {true_class} out of range for {z.shape[-1]} logits")
    loss, grad = _sigmoid_bce_rows(z[None, :], np.array([true_class]))
    return float(loss[0]), grad[0]


def _sigmoid_bce_rows(Z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Y = np.zeros_like(Z)
    Y[np.arange(len(y)), y] = 1.0
    # log(1 + exp(z)) - y z, written stably
    loss = (np.maximum(Z, 0.0) - Z * Y + np.log1p(np.exp(-np.abs(Z)))).sum(axis=1)
    grad = 0.5 * (1.0 + np.tanh(0.5 * Z)) - Y
    return loss, grad


def per_node_loss(outputs: np.ndarray, targets, loss_kind: LossKind):
    loss_kind = LossKind(loss_kind)
    if loss_kind is LossKind.COSINE:
        return _cosine_rows(outputs, np.asarray(targets, dtype=np.float64))
    y = np.asarray(targets, dtype=np.int64)
    if y.shape != (outputs.shape[0],) or (y.size and (y.min() < 0 or y.max() >= outputs.shape[1])):
        raise ValueError("class targets must be one valid index per output row")
    if loss_kind is LossKind.SOFTMAX_CE:
        return _softmax_ce_rows(outputs, y)
    return _sigmoid_bce_rows(outputs, y)


# --- backprop -------------------------------------------------------------

@dataclass
class Gradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        return [g for pair in zip(self.dW, self.db) for g in pair]


def backward(model: SageModel, ds, node_ids, targets, loss_kind, cache: ForwardCache
             ) -> tuple[float, Gradients]:
    """Mean loss over ``node_ids`` and its gradient for every parameter.

    ``targets`` is an (n, out_dim) array of target vectors for cosine loss,
    or n class indices for the classification losses. Repeated ids count
    once per occurrence.
    """
    ids = np.asarray(node_ids, dtype=np.int64)
    if cache.output is None or not np.array_equal(ids, cache.node_ids):
        raise ModelError("forward cache was built for different node ids", code="cache_mismatch")
    if cache.param_ids != tuple(id(p) for p in model.parameters()) or len(cache.inputs) != len(model.layers):
        raise ModelError("forward cache does not belong to this model", code="cache_mismatch")
    if ids.size == 0:
        raise ValueError("backward needs at least one node")

    losses, dout = per_node_loss(cache.output[ids], targets, loss_kind)
    n = len(ids)
    delta = np.zeros_like(cache.output)
    np.add.at(delta, ids, dout / n)

    A_T = ds.mean_operator.T.tocsr()
    dW = [None] * len(model.layers)
    db = [None] * len(model.layers)
    last = len(model.layers) - 1
    for k in range(last, -1, -1):
        layer = model.layers[k]
        if k != last:
            delta = delta * (cache.preacts[k] > 0.0)
        dW[k] = delta.T @ cache.inputs[k]
        db[k] = delta.sum(axis=0)
        if k:
            dx = delta @ layer.W
            d_in = layer.in_dim
            delta = dx[:, :d_in] + A_T @ dx[:, d_in:]
    return float(losses.mean()), Gradients(dW, db)


# --- optimizers -----------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


# --- training -------------------------------------------------------------

@dataclass
class TrainedModel:
    model: SageModel
    loss_kind: LossKind
    table: EncodingTable

    def predict(self, ds, node_ids) -> np.ndarray:
        """Label ids: nearest table row for cosine models, argmax of logits otherwise."""
        out, _ = forward(self.model, ds, node_ids)
        if self.loss_kind is LossKind.COSINE:
            return decode_nearest_batch(out, self.table)
        return np.argmax(out, axis=1)


def training_targets(ds, node_ids, table: EncodingTable, loss_kind: LossKind):
    labels = ds.labels[np.asarray(node_ids, dtype=np.int64)]
    if LossKind(loss_kind).uses_table:
        return table.vectors[labels]
    return labels


def train(ds, train_ids, table: EncodingTable | None, cfg: TrainConfig
          ) -> tuple[TrainedModel, list[float]]:
    """Full-batch training; returns the model and the per-epoch mean loss.

    ``history[e]`` is the loss evaluated before the update of epoch ``e``.
    """
    ids = np.asarray(train_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("training set is empty")
    n_labels = len(ds.vocabulary)
    if cfg.loss_kind.uses_table:
        if table is None or len(table) != n_labels:
            raise ValueError("encoding table must have one row per vocabulary label")
        out_dim = table.dim
    else:
        out_dim = n_labels
        if table is None:
            table = one_hot_table(ds.vocabulary)

    model = init_model(ds.feature_dim, cfg.hidden_dim, out_dim, seed=cfg.seed)
    params = model.parameters()
    if cfg.optimizer is Optimizer.ADAM:
        opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        opt = SGD(params, cfg.learning_rate)
    targets = training_targets(ds, ids, table, cfg.loss_kind)

    history: list[float] = []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        try:
            _, cache = forward(model, ds, ids)
        except ModelError as exc:
            raise TrainingDivergedError(f"epoch {epoch}: {exc}") from exc
        loss, grads = backward(model, ds, ids, targets, cfg.loss_kind, cache)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at epoch {epoch} (lr={cfg.learning_rate}); lower the learning rate"
            )
        history.append(loss)
        opt.step(grads.flat())
        if cfg.early_stop_patience is not None:
            if loss < best - EARLY_STOP_MIN_DELTA:
                best, stale = loss, 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    log.info("early stop at epoch %d (loss %.6g)", epoch, loss)
                    break
    return TrainedModel(model, cfg.loss_kind, table), history


def history_csv(history) -> str:
    lines = ["epoch,mean_loss"]
    lines += [f"{e},{loss!r}" for e, loss in enumerate(history)]
    return "\n".join(lines) + "\n"
