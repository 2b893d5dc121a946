"""Labelled full-tree corpora for classifier training."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .classifier import LabeledSet


def split_dataset(data, ratio, seed):
    """Seeded split at tree granularity: all rows of a tree land on one side."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    trees = np.unique(data.tree_id)
    if trees.size < 2:
        raise ValueError("need at least 2 trees to split")
    gen = _rng.stream(seed, "split")
    perm = gen.permutation(trees)
    n_train = min(max(int(round(ratio * trees.size)), 1), trees.size - 1)
    train_trees = perm[:n_train]
    in_train = np.isin(data.tree_id, train_trees)
    return data.take(np.flatnonzero(in_train)), data.take(np.flatnonzero(~in_train))


def subsample_trees(data, fraction, seed):
    trees = np.unique(data.tree_id)
    if fraction >= 1.0:
        return data
    gen = _rng.stream(seed, "subsample")
    n = max(1, int(round(fraction * trees.size)))
    keep = gen.choice(trees, size=n, replace=False)
    return data.take(np.flatnonzero(np.isin(data.tree_id, keep)))


def full_tree_size(K, d_max):
    return 1 + K + (d_max - 1) * K * K


@dataclass
class Corpus:
    """Columnar labelled rows {tree_id, node_id, P, H, d, label}."""
    tree_id: np.ndarray
    node_id: np.ndarray
    P: np.ndarray
    H: np.ndarray
    d: np.ndarray
    label: np.ndarray

    def __len__(self):
        return self.tree_id.size

    def to_set(self):
        X = np.column_stack((self.P, self.H, self.d.astype(np.float64)))
        return LabeledSet(X, self.label.astype(np.float64), self.tree_id.astype(np.int64))

    def lines(self):
        for i in range(len(self)):
            yield ('{"tree_id": %d, "node_id": %d, "P": %r, "H": %r, "d": %d, "label": %d}\n'
                   % (self.tree_id[i], self.node_id[i], float(self.P[i]), float(self.H[i]),
                      self.d[i], self.label[i]))


def collect_labeled_trees(draft, target, prompts, K, d_max, count, M=1000, seed=0):
    """Build, verify and label ``count`` full expansion trees.

    Rounds follow the generation loop: each tree is drafted at the current
    context, verified greedily, and the context advances by the accepted
    tokens plus the bonus token. Prompts are used in order, each for
    ceil(count / len(prompts)) rounds until ``count`` trees exist.

    Returns ``(header, Corpus)``.
    """
    from .drafting import expand_full
    from .verification import accepted_path_arrays

    if K < 1 or d_max < 1:
        raise ValueError("K and d_max must be >= 1")
    if not prompts:
        raise ValueError("empty prompt set")
    cols = {k: [] for k in ("tree_id", "node_id", "P", "H", "d", "label")}
    per_prompt = math.ceil(count / len(prompts))
    tree_id = 0
    taus = []
    for prompt in prompts:
        ctx = list(prompt)
        for _ in range(per_prompt):
            if tree_id >= count:
                break
            exp = expand_full(draft, ctx, K, d_max, top_m=M)
            path, bonus = accepted_path_arrays(exp, target, ctx)
            taus.append(len(path))
            label = np.zeros(len(exp), dtype=np.int8)
            label[path] = 1
            keep = np.flatnonzero(np.isfinite(exp.P) & np.isfinite(exp.H))
            keep = keep[keep > 0]
            cols["tree_id"].append(np.full(keep.size, tree_id, dtype=np.int32))
            cols["node_id"].append(keep.astype(np.int32))
            cols["P"].append(exp.P[keep])
            cols["H"].append(exp.H[keep])
            cols["d"].append((exp.depth[keep] - 1).astype(np.int8))
            cols["label"].append(label[keep])
            ctx.extend(exp.token[path].tolist())
            ctx.append(bonus)
            tree_id += 1
    corpus = Corpus(**{k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()})
    header = {"K": K, "d_max": d_max, "seed": seed, "count": tree_id, "top_m": M,
              "model_pair_spec": None if draft.spec is None else draft.spec.to_dict(),
              "mean_tau": float(np.mean(taus)) if taus else 0.0}
    return header, corpus


def corpus_header_line(header):
    return json.dumps(header, sort_keys=True) + "\n"


def write_corpus(path, header, corpus):
    with open(path, "w") as fh:
        fh.write(corpus_header_line(header))
        fh.writelines(corpus.lines())


def corpus_sha256(header, corpus):
    """Digest of the exact bytes ``write_corpus`` would produce."""
    h = hashlib.sha256(corpus_header_line(header).encode())
    buf = []
    for line in corpus.lines():
        buf.append(line)
        if len(buf) == 100_000:
            h.update("".join(buf).encode())
            buf = []
    h.update("".join(buf).encode())
    return h.hexdigest()


def read_corpus(path):
    """Return (header, LabeledSet)."""
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise ValueError(f"{path}: empty corpus")
        header = json.loads(first)
        tid, X, y = [], [], []
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            tid.append(r["tree_id"])
            X.append((r["P"], r["H"], r["d"]))
            y.append(r["label"])
    return header, LabeledSet(np.array(X, dtype=np.float64).reshape(-1, 3), np.array(y, dtype=np.float64),
                              np.array(tid, dtype=np.int64))

