"""Adam training loop with best-validation checkpointing, metrics and checkpoint I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import LabelClass
from .model import ModelConfig, ModelParams, forward, make_batch, param_shapes

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ECKP"
CHECKPOINT_VERSION = 1
EVAL_BATCH = 64


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        ag.zero_grad(self.params)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_json(self) -> dict:
        names = [c.key for c in LabelClass]
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "total": self.total,
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": {
                n: {"precision": p, "recall": r, "f1": f}
                for n, p, r, f in zip(names, self.precision, self.recall, self.f1)
            },
        }


def _ratio(num, den) -> float:
    return float(num / den) if den else 0.0


def metrics_from_confusion(matrix) -> MetricsReport:
    """Rows are true labels, columns predictions; any 0/0 ratio counts as 0."""
    cm = np.asarray(matrix)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative entries")
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is all zero")
    diag = np.diag(cm)
    precision = [_ratio(diag[c], cm[:, c].sum()) for c in range(len(cm))]
    recall = [_ratio(diag[c], cm[c, :].sum()) for c in range(len(cm))]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    return MetricsReport(cm, float(diag.sum() / total), precision, recall, f1, float(np.mean(f1)))


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    val_accuracy: float
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "model_config": self.params.config.to_dict(),
            "epoch": self.epoch,
            "val_accuracy": self.val_accuracy,
            **self.extra,
        }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.metadata(), sort_keys=True).encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(meta)), meta]
    for name, t in ckpt.params.tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<B", len(raw)) + raw)
        out.append(struct.pack("<B", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    version, mlen = struct.unpack_from("<HI", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(buf[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    config = ModelConfig.from_dict(meta.pop("model_config"))
    meta.pop("format_version", None)
    expected = param_shapes(config)
    tensors = {}
    try:
        while pos < len(buf):
            nlen = buf[pos]
            name = buf[pos + 1 : pos + 1 + nlen].decode("utf-8")
            pos += 1 + nlen
            rank = buf[pos]
            dims = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            n = math.prod(dims)
            if len(buf) - pos < 8 * n:
                raise CheckpointError("truncated parameter payload")
            data = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
            tensors[name] = Tensor(data.astype(np.float64), requires_grad=True, name=name)
    except (IndexError, struct.error):
        raise CheckpointError("truncated parameter table") from None
    got = {k: v.shape for k, v in tensors.items()}
    if got != expected or list(got) != list(expected):
        raise CheckpointError("parameter table inconsistent with stored model_config")
    epoch = meta.pop("epoch")
    val = meta.pop("val_accuracy")
    return Checkpoint(ModelParams(config, tensors), epoch, val, meta)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_accuracy: float
    val_accuracy: float
    mean_loss: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = -1.0

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_accuracy", "val_accuracy", "mean_loss"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_accuracy), repr(r.val_accuracy), repr(r.mean_loss)])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.records.append(
                    EpochRecord(int(row["epoch"]), float(row["train_accuracy"]),
                                float(row["val_accuracy"]), float(row["mean_loss"]))
                )
        vals = hist.column("val_accuracy")
        if vals:
            hist.best_val_accuracy = max(vals)
            hist.best_epoch = hist.records[vals.index(hist.best_val_accuracy)].epoch
        return hist


def predict(params: ModelParams, dataset, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Argmax class per sample; np.argmax already picks the lowest index on ties."""
    preds = []
    for i in range(0, len(dataset), batch_size):
        chunk = dataset[i : i + batch_size]
        logits = forward(params, make_batch(chunk), train=False).data
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds)


def accuracy(params: ModelParams, dataset) -> float:
    labels = np.array([int(ft.label) for ft in dataset])
    return float(np.mean(predict(params, dataset) == labels))


def evaluate(params: ModelParams, dataset) -> MetricsReport:
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    labels = np.array([int(ft.label) for ft in dataset])
    return metrics_from_confusion(confusion_matrix(labels, predict(params, dataset)))


def train(
    model_config: ModelConfig,
    params: ModelParams,
    train_set,
    val_set,
    train_config: TrainConfig,
    on_epoch=None,
) -> tuple[Checkpoint, TrainHistory]:
    """Train ``params`` in place; return the best-validation checkpoint and the history.

    A checkpoint is taken (and written, if ``train_config.checkpoint_path`` is set)
    whenever validation accuracy strictly exceeds the best so far.
    """
    if not train_set or not val_set:
        raise TrainingError("training and validation sets must be non-empty")
    if params.config != model_config:
        raise TrainingError("params were built for a different model config")
    train_set, val_set = list(train_set), list(val_set)
    opt = Adam(params.values(), model_config.learning_rate, train_config.beta1,
               train_config.beta2, train_config.eps)
    bs = model_config.batch_size
    history = TrainHistory()
    best = None

    for epoch in range(1, train_config.epochs + 1):
        order = np.random.Generator(np.random.PCG64(derive_seed(train_config.seed, epoch))).permutation(len(train_set))
        loss_sum = 0.0
        for bi, start in enumerate(range(0, len(order), bs)):
            chunk = [train_set[i] for i in order[start : start + bs]]
            batch = make_batch(chunk)
            opt.zero_grad()
            logits = forward(params, batch, train=True, seed=derive_seed(train_config.seed, epoch, bi))
            loss = ag.softmax_cross_entropy(logits, batch.labels)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            ag.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(chunk)

        rec = EpochRecord(epoch, accuracy(params, train_set), accuracy(params, val_set),
                          loss_sum / len(train_set))
        history.records.append(rec)
        if rec.val_accuracy > history.best_val_accuracy:
            history.best_val_accuracy = rec.val_accuracy
            history.best_epoch = epoch
            best = Checkpoint(params.copy(), epoch, rec.val_accuracy)
            if train_config.checkpoint_path:
                save_checkpoint(best, train_config.checkpoint_path)
        log.debug("epoch %d loss %.4f train %.3f val %.3f", epoch, rec.mean_loss,
                  rec.train_accuracy, rec.val_accuracy)
        if on_epoch is not None:
            on_epoch(rec)
    return best, history
