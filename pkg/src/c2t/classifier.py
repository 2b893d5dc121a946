"""Two-layer FFN confidence classifier over (P, H, d), trained from scratch.

Forward: sigmoid(W2 . relu(W1 [P, H, d] + b1) + b2). Training uses BCE,
Adam and negative sampling of the sparse accepted-node labels.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from . import rng as _rng

FEATURE_ORDER = ("P", "H", "d")
BCE_CLAMP = 1e-7


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class MlpParams:
    hidden: int
    W1: np.ndarray  # (hidden, 3)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden,)
    b2: float

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        self.W1 = np.asarray(self.W1, dtype=np.float64).reshape(self.hidden, 3)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(self.hidden)
        self.W2 = np.asarray(self.W2, dtype=np.float64).reshape(self.hidden)
        self.b2 = float(self.b2)

    def copy(self):
        return MlpParams(self.hidden, self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2)

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return (self.hidden == other.hidden and np.array_equal(self.W1, other.W1)
                and np.array_equal(self.b1, other.b1) and np.array_equal(self.W2, other.W2)
                and self.b2 == other.b2)

    def logits(self, X):
        return kernels.mlp_logits(X, self.W1, self.b1, self.W2, self.b2)

    def __call__(self, X):
        return kernels.sigmoid(self.logits(X))


@dataclass
class TrainConfig:
    hidden: int = 48
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 1024
    eval_batch: int = 1011
    split: float = 0.95
    neg_ratio: float = 10.0
    threshold: float = 0.5
    seed: int = 0
    fraction: float = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.batch < 1 or self.eval_batch < 1:
            raise ValueError("batch sizes must be >= 1")


def finetune_config(**kw):
    base = dict(lr=1e-4, epochs=10, fraction=0.10)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class LabeledSet:
    """Rows of (P, H, d) with binary labels; ``tree_id`` groups rows by tree."""
    X: np.ndarray
    y: np.ndarray
    tree_id: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, 3)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.tree_id is None:
            self.tree_id = np.arange(self.X.shape[0], dtype=np.int64)
        self.tree_id = np.asarray(self.tree_id, dtype=np.int64).reshape(-1)
        if not (self.X.shape[0] == self.y.shape[0] == self.tree_id.shape[0]):
            raise ValueError("X, y and tree_id lengths differ")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.X.shape[0]

    def take(self, idx):
        return LabeledSet(self.X[idx], self.y[idx], self.tree_id[idx])


@dataclass(frozen=True)
class LabeledExample:
    P: float
    H: float
    d: int
    label: int


@dataclass
class EvalStats:
    recall: float | None  # None when the set has no positives
    positive_rate: float
    loss: float
    accuracy: float = float("nan")

    @property
    def theta(self):
        return self.positive_rate


def init_params(hidden, seed):
    gen = _rng.stream(seed, "init")
    a1 = 1.0 / math.sqrt(3.0)
    a2 = 1.0 / math.sqrt(hidden)
    W1 = gen.uniform(-a1, a1, size=(hidden, 3))
    b1 = gen.uniform(-a1, a1, size=hidden)
    W2 = gen.uniform(-a2, a2, size=hidden)
    b2 = float(gen.uniform(-a2, a2))
    return MlpParams(hidden, W1, b1, W2, b2)


def mlp_forward(params, features):
    """Confidence for one (P, H, d) triple or a batch of them."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(-1, 3)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite classifier input")
    out = params(X)
    return float(out[0]) if single else out


def bce(pred, y):
    q = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)))


def negative_sample(data, neg_ratio, seed):
    """Keep every positive and ``round(neg_ratio * positives)`` negatives."""
    pos = np.flatnonzero(data.y == 1)
    neg = np.flatnonzero(data.y == 0)
    if pos.size == 0:
        raise TrainingError("dataset has no positive examples")
    want = min(neg.size, int(round(neg_ratio * pos.size)))
    gen = _rng.stream(seed, "negsample")
    keep_neg = np.sort(gen.choice(neg.size, size=want, replace=False)) if want < neg.size else np.arange(neg.size)
    idx = np.sort(np.concatenate((pos, neg[keep_neg])))
    return data.take(idx)


def evaluate(params, data, threshold=0.5, batch=None):
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    batch = batch or len(data)
    conf = np.concatenate([params(data.X[i:i + batch]) for i in range(0, len(data), batch)])
    pred = conf > threshold
    y = data.y == 1
    tp = int(np.sum(pred & y))
    npos = int(y.sum())
    recall = tp / npos if npos else None
    theta = float(pred.mean())
    acc = float(np.mean(pred == y))
    return EvalStats(recall, theta, bce(conf, data.y), acc)


def _adam_step(params, grads, state, lr, b1=0.9, b2=0.999, eps=1e-8):
    state["t"] += 1
    t = state["t"]
    for name, g in grads.items():
        m = state["m"][name] = b1 * state["m"][name] + (1 - b1) * g
        v = state["v"][name] = b2 * state["v"][name] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        step = lr * mhat / (np.sqrt(vhat) + eps)
        if name == "b2":
            params.b2 = float(params.b2 - step)
        else:
            setattr(params, name, getattr(params, name) - step)


def _grads(params, X, y):
    z1 = X @ params.W1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + params.b2
    pred = 1.0 / (1.0 + np.exp(-z2))
    n = X.shape[0]
    dz2 = (pred - y) / n
    gW2 = a1.T @ dz2
    gb2 = np.array(dz2.sum())
    dz1 = np.outer(dz2, params.W2) * (z1 > 0)
    gW1 = dz1.T @ X
    gb1 = dz1.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}, pred


def fit(params, train_set, val_set, config):
    """Run the minibatch Adam loop in place on a copy of ``params``.

    Returns ``(params, curve)`` where ``curve`` has one dict per epoch.
    """
    params = params.copy()
    sampled = negative_sample(train_set, config.neg_ratio, config.seed)
    state = {"t": 0,
             "m": {k: np.zeros_like(np.asarray(getattr(params, k), dtype=np.float64)) for k in ("W1", "b1", "W2", "b2")},
             "v": {k: np.zeros_like(np.asarray(getattr(params, k), dtype=np.float64)) for k in ("W1", "b1", "W2", "b2")}}
    gen = _rng.stream(config.seed, "shuffle")
    curve = []
    for epoch in range(1, config.epochs + 1):
        order = gen.permutation(len(sampled))
        for start in range(0, order.size, config.batch):
            idx = order[start:start + config.batch]
            g, _ = _grads(params, sampled.X[idx], sampled.y[idx])
            _adam_step(params, g, state, config.lr)
        train_loss = bce(params(sampled.X), sampled.y)
        if not math.isfinite(train_loss):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch}: |W1|max={np.abs(params.W1).max():.3g}, "
                f"|W2|max={np.abs(params.W2).max():.3g}, b2={params.b2:.3g}")
        row = {"epoch": epoch, "train_loss": train_loss}
        if val_set is not None and len(val_set):
            st = evaluate(params, val_set, config.threshold, config.eval_batch)
            row.update(val_loss=st.loss, val_recall=st.recall, val_theta=st.positive_rate)
        else:
            row.update(val_loss=None, val_recall=None, val_theta=None)
        curve.append(row)
    return params, curve


def train(dataset, config=None, val=None):
    """Train a fresh classifier.

    ``dataset`` is split at tree granularity by ``config.split`` unless an
    explicit ``val`` set is given.
    """
    from .datagen import split_dataset

    config = config or TrainConfig()
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if val is None:
        train_set, val = split_dataset(dataset, config.split, config.seed)
    else:
        train_set = dataset
    params = init_params(config.hidden, config.seed)
    if config.epochs == 0:
        return params, []
    return fit(params, train_set, val, config)


def fine_tune(params, dataset, config=None, val=None, return_curve=False):
    """Continue training on a tree-level subsample (default 10%, lr 1e-4)."""
    from .datagen import split_dataset, subsample_trees

    config = config or finetune_config()
    if config.fraction <= 0 or config.epochs == 0:
        return (params.copy(), []) if return_curve else params.copy()
    if val is None:
        train_set, val = split_dataset(dataset, config.split, config.seed)
    else:
        train_set = dataset
    train_set = subsample_trees(train_set, config.fraction, config.seed)
    out, curve = fit(params, train_set, val, config)
    return (out, curve) if return_curve else out


# ---------------------------------------------------------------------------
# checkpoints

def save(params, path):
    doc = {"hidden": params.hidden,
           "W1": params.W1.reshape(-1).tolist(),
           "b1": params.b1.tolist(),
           "W2": params.W2.tolist(),
           "b2": params.b2,
           "feature_order": list(FEATURE_ORDER),
           "log_base": "e"}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    for key in ("hidden", "W1", "b1", "W2", "b2"):
        if key not in doc:
            raise CheckpointError(f"checkpoint lacks {key!r}")
    h = int(doc["hidden"])
    if tuple(doc.get("feature_order", FEATURE_ORDER)) != FEATURE_ORDER:
        raise CheckpointError(f"feature_order must be {list(FEATURE_ORDER)}")
    if doc.get("log_base", "e") != "e":
        raise CheckpointError("only natural-log entropy checkpoints are supported")
    for key, n in (("W1", 3 * h), ("b1", h), ("W2", h)):
        if len(doc[key]) != n:
            raise CheckpointError(f"{key} has {len(doc[key])} values, expected {n} for hidden={h}"
                                  + (" (shape (hidden, 3), row-major)" if key == "W1" else ""))
    return MlpParams(h, np.array(doc["W1"], dtype=np.float64).reshape(h, 3),
                     doc["b1"], doc["W2"], doc["b2"])


def write_curve(curve, path):
    cols = ["epoch", "train_loss", "val_loss", "val_recall", "val_theta"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in curve:
            w.writerow([_fmt(row.get(c)) for c in cols])


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def separable_dataset(n=50_000, seed=1234):
    """Synthetic rows labelled by [P > 0.5]; H and d are distractors."""
    gen = _rng.stream(seed, "separable")
    P = gen.random(n)
    H = gen.uniform(0.0, 10.0, n)
    d = gen.integers(0, 11, n).astype(np.float64)
    return LabeledSet(np.column_stack((P, H, d)), (P > 0.5).astype(np.float64))
