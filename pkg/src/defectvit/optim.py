"""Loss, AdamW, and the epoch training loop.

Defaults: AdamW with learning rate 0.001 and decoupled weight decay
0.0001, sparse categorical cross entropy on integer labels, batches of
32 with a fresh seeded shuffle every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import tensor as T
from .data import AugmentConfig, Dataset, augment, standardize
from .errors import ContractError, DataError
from .model import ModelConfig, ModelParams, forward
from .seeding import STREAM_AUGMENT, STREAM_DROPOUT, STREAM_SHUFFLE, substream
from .tensor import Tensor


def sparse_ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], via log-sum-exp.

    Labels are integer class indices; an out-of-range label names the
    offending sample. The gradient with respect to each row of logits is
    (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ContractError(f"expected (batch, classes) logits, got shape {logits.shape}")
    batch, num_classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ContractError(f"expected {batch} labels, got shape {labels.shape}")
    for i, label in enumerate(labels):
        if not 0 <= int(label) < num_classes:
            raise DataError(f"label {int(label)} out of range for {num_classes} classes at sample {i}")
    onehot = np.zeros((batch, num_classes))
    onehot[np.arange(batch), labels.astype(int)] = 1.0
    picked = T.tensor_sum(T.mul(T.log_softmax(logits), onehot))
    return T.mul(T.neg(picked), 1.0 / batch)


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0001


class AdamWState:
    """Step count plus per-parameter first/second moment buffers."""

    def __init__(self, params: ModelParams, config: AdamWConfig = AdamWConfig()):
        self.config = config
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "lr": self.config.lr,
            "beta1": self.config.beta1,
            "beta2": self.config.beta2,
            "eps": self.config.eps,
            "weight_decay": self.config.weight_decay,
            "m": self.m,
            "v": self.v,
        }

    @classmethod
    def from_dict(cls, params: ModelParams, d: dict) -> "AdamWState":
        state = cls(params, AdamWConfig(
            lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"],
            eps=d["eps"], weight_decay=d["weight_decay"],
        ))
        state.t = int(d["t"])
        for name in state.m:
            state.m[name][...] = d["m"][name]
            state.v[name][...] = d["v"][name]
        return state


def adamw_step(params: ModelParams, state: AdamWState) -> None:
    """One decoupled-weight-decay Adam update, in place.

    param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
    """
    cfg = state.config
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ContractError(f"parameter '{name}' has no gradient; run backward() first")
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)


def batch_starts(n: int, batch_size: int) -> list[tuple[int, int]]:
    """(start, stop) pairs covering range(n); the last batch may be smaller."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    return [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


def train_epoch(
    params: ModelParams,
    train_set: Dataset,
    state: AdamWState,
    *,
    config: ModelConfig,
    augment_cfg: AugmentConfig,
    norm_mean: np.ndarray,
    norm_std: np.ndarray,
    batch_size: int,
    seed: int,
    epoch: int,
) -> tuple[float, float]:
    """One pass over the training split; returns (mean loss, training accuracy).

    Order of work per batch: augment -> forward in train mode -> loss ->
    backward -> AdamW step -> clear grads. Shuffling, augmentation, and
    dropout each draw from substreams keyed on (seed, epoch, ...), so the
    epoch is reproducible regardless of scheduling.
    """
    n = len(train_set.images)
    if n == 0:
        raise DataError("training split is empty")
    order = substream(seed, STREAM_SHUFFLE, epoch).permutation(n)
    labels_all = np.array([img.label for img in train_set.images], dtype=int)

    total_loss = 0.0
    correct = 0
    for batch_no, (start, stop) in enumerate(batch_starts(n, batch_size)):
        idxs = order[start:stop]
        pixels = []
        for i in idxs:
            rng = substream(augment_cfg.seed, STREAM_AUGMENT, epoch, int(i))
            pixels.append(augment(train_set.images[int(i)], augment_cfg, rng).pixels)
        batch = standardize(np.stack(pixels), norm_mean, norm_std)
        batch_labels = labels_all[idxs]

        drop_rng = substream(seed, STREAM_DROPOUT, epoch, batch_no)
        logits = forward(batch, params, config, training=True, rng=drop_rng)
        loss = sparse_ce_loss(logits, batch_labels)
        loss.backward()
        adamw_step(params, state)
        params.zero_grads()

        total_loss += loss.item() * len(idxs)
        correct += int((logits.data.argmax(axis=1) == batch_labels).sum())

    return total_loss / n, correct / n


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    images: np.ndarray,
    labels: np.ndarray,
    *,
    norm_mean: np.ndarray,
    norm_std: np.ndarray,
    batch_size: int = 32,
) -> tuple[float, float, np.ndarray]:
    """Eval-mode pass over a set; returns (mean loss, accuracy, logits)."""
    n = len(images)
    if n == 0:
        raise DataError("evaluation set is empty")
    labels = np.asarray(labels, dtype=int)
    chunks = []
    with T.no_grad():
        for start, stop in batch_starts(n, batch_size):
            batch = standardize(np.asarray(images[start:stop], dtype=np.float64), norm_mean, norm_std)
            chunks.append(forward(batch, params, config, training=False).data)
    logits = np.concatenate(chunks, axis=0)
    loss = sparse_ce_loss(Tensor(logits), labels).item()
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, accuracy, logits
