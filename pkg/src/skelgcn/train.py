"""Data loading, momentum SGD training, evaluation, fusion and persistence."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .graph import build_graph
from .model import Model, ModelConfig
from .skeleton import (DEFAULT_TOPOLOGY, BoneTopology, DatasetManifest, center_sequence,
                       load_sequence, normalize_temporal, to_bone_stream)
from .ssm import pairwise_frame_distances

__all__ = [
    "Dataset", "load_dataset", "TrainConfig", "SGD", "TrainingDiverged", "train", "Metrics",
    "topk_accuracy", "metrics_from_scores", "evaluate", "predict_proba", "fuse_scores", "save_checkpoint",
    "load_checkpoint", "CheckpointError", "write_history", "write_scores", "read_scores",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    """Model-ready arrays: ``x`` is ``[N, 3, T, n]``, ``ssm`` is ``[N, T, T]``."""

    x: np.ndarray
    labels: np.ndarray
    ids: list[str]
    ssm: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.labels[idx], [self.ids[i] for i in idx],
                       None if self.ssm is None else self.ssm[idx])


def load_dataset(manifest: DatasetManifest, subset: str, frames: int = 64, stream: str = "joint",
                 metric: str | None = "l2", topology: BoneTopology = DEFAULT_TOPOLOGY) -> Dataset:
    """Read one partition: temporal normalization, centering, optional bone
    conversion, then the SSM of the resulting stream (skipped when ``metric`` is None)."""
    if stream not in ("joint", "bone"):
        raise ValueError(f"stream must be joint or bone, got {stream!r}")
    items = manifest.partition(subset)
    if not items:
        raise ValueError(f"{subset} partition of the {manifest.split} split is empty")
    xs, ssms = [], []
    for it in items:
        seq = load_sequence(manifest.resolve(it))
        if seq.n != topology.num_joints:
            raise ValueError(f"{it.path}: {seq.n} joints, expected {topology.num_joints}")
        seq = center_sequence(normalize_temporal(seq, frames), topology)
        if stream == "bone":
            seq = to_bone_stream(seq, topology)
        xs.append(seq.data.transpose(2, 1, 0))
        if metric is not None:
            ssms.append(pairwise_frame_distances(seq.data, metric))
    labels = np.array([it.label for it in items], dtype=np.intp)
    return Dataset(np.stack(xs), labels, [it.sample_id for it in items],
                   np.stack(ssms) if metric is not None else None)


# ---------------------------------------------------------------- optimisation

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    milestones: tuple[float, ...] = (0.6, 0.8)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("lr, momentum or weight_decay out of range")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch, dropped 10x at each milestone fraction."""
        drops = sum(epoch >= math.floor(m * self.epochs) for m in self.milestones)
        return self.lr * 0.1 ** drops


class SGD:
    """Heavy-ball momentum: ``v = mu v + g + wd p``; ``p -= lr v``."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class TrainingDiverged(RuntimeError):
    pass


def _forward(model: Model, data: Dataset, idx) -> Tensor:
    ssm = None if data.ssm is None else data.ssm[idx]
    return model(data.x[idx], ssm)


def train(model: Model, data: Dataset, cfg: TrainConfig) -> list[dict]:
    """Train in place; returns one history row per epoch."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    if model.config.regina.enabled and not model.config.regina.force_ones and data.ssm is None:
        raise ValueError("model uses SSMs but the dataset has none")
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = np.random.default_rng([cfg.seed, 2])
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = shuffle.permutation(len(data))
        total, correct = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            logits = _forward(model, data, idx)
            loss = ad.softmax_cross_entropy(logits, data.labels[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start} (lr {opt.lr:g})")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == data.labels[idx]).sum())
        row = {"epoch": epoch + 1, "train_loss": total / len(data),
               "train_top1": correct / len(data), "lr": opt.lr}
        history.append(row)
        log.info("epoch %d loss %.4f top1 %.3f lr %g", row["epoch"], row["train_loss"],
                 row["train_top1"], row["lr"])
    return history


# ---------------------------------------------------------------- evaluation

@dataclass
class Metrics:
    top1: float
    top5: float
    per_class: list[float]
    confusion: np.ndarray
    probs: np.ndarray = field(repr=False, default=None)

    def summary(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "per_class": self.per_class}


def _ranking(scores: np.ndarray) -> np.ndarray:
    # stable sort on the negated scores: equal scores keep lower class index first
    return np.argsort(-scores, axis=1, kind="stable")


def topk_accuracy(scores: np.ndarray, labels, k: int) -> float:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples to score")
    top = _ranking(scores)[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def metrics_from_scores(scores: np.ndarray, labels, num_classes: int | None = None) -> Metrics:
    scores, labels = np.asarray(scores), np.asarray(labels)
    c = num_classes or scores.shape[1]
    pred = _ranking(scores)[:, 0]
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[i, i] / counts[i]) if counts[i] else float("nan") for i in range(c)]
    return Metrics(topk_accuracy(scores, labels, 1), topk_accuracy(scores, labels, 5),
                   per_class, confusion)


def predict_proba(model: Model, data: Dataset, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            out.append(ad.softmax(_forward(model, data, idx).data))
    return np.concatenate(out)


def evaluate(model: Model, data: Dataset, batch_size: int = 64) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty split")
    probs = predict_proba(model, data, batch_size)
    m = metrics_from_scores(probs, data.labels, model.config.num_classes)
    m.probs = probs
    return m


def fuse_scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Predicted class per row from the sum of two streams' softmax scores."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"score shapes differ: {a.shape} vs {b.shape}")
    for name, s in (("first", a), ("second", b)):
        if np.any(s < -1e-6) or np.any(np.abs(s.sum(axis=1) - 1) > 1e-6):
            raise ValueError(f"{name} score matrix rows are not probability vectors")
    return _ranking(a + b)[:, 0]


# ---------------------------------------------------------------- persistence

class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    params = {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
              for name, arr in model.state().items()}
    doc = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "params": params,
           "meta": meta or {}}
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n")


def load_checkpoint(path, graph=None) -> tuple[Model, dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint: {exc}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    for key in ("config", "params"):
        if key not in doc:
            raise CheckpointError(f"{path}: checkpoint missing {key!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
    except (TypeError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from None
    if graph is None:
        if config.num_joints != DEFAULT_TOPOLOGY.num_joints:
            raise CheckpointError(f"{path}: {config.num_joints}-joint model needs an explicit graph")
        graph = build_graph(DEFAULT_TOPOLOGY)
    model = Model(config, graph)
    state = model.state()
    stored = doc["params"]
    for name in stored:
        if name not in state:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
    for name, arr in state.items():
        if name not in stored:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        entry = stored[name]
        if tuple(entry.get("shape", ())) != arr.shape:
            raise CheckpointError(f"{path}: parameter {name!r} has shape {entry.get('shape')}, "
                                  f"model expects {list(arr.shape)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != arr.size:
            raise CheckpointError(f"{path}: parameter {name!r} holds {data.size} values, "
                                  f"shape needs {arr.size}")
        arr[...] = data.reshape(arr.shape)
    return model.eval(), doc.get("meta", {})


HISTORY_FIELDS = ("epoch", "train_loss", "train_top1", "lr")


def write_history(path, history: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
    Path(path).write_text(buf.getvalue())


def write_scores(path, ids: list[str], probs: np.ndarray) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id"] + [f"c{i}" for i in range(probs.shape[1])])
    for sid, row in zip(ids, probs):
        w.writerow([sid] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_scores(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["sample_id"]:
        raise ValueError(f"{path}: missing sample_id header")
    width = len(rows[0])
    ids, vals = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(r)}")
        ids.append(r[0])
        try:
            vals.append([float(v) for v in r[1:]])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric score") from None
    return ids, np.array(vals, dtype=np.float64).reshape(len(ids), width - 1)
