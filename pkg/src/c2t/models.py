"""Synthetic order-k tabular language models used as target/draft pairs.

Rows are synthesised on demand. A target row for a context is a pool row
(drawn once from a Dirichlet mixture) with its token labels scrambled by a
context-keyed affine bijection ``i -> (a*i + b) mod V``. Relabelling keeps the
row exactly Dirichlet distributed while letting a few thousand pool rows serve
millions of contexts deterministically.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from . import rng as _rng


class ModelError(ValueError):
    pass


ENTROPY_BIN_EDGES = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, math.inf)

# (concentration, weight); most rows are near one-hot, like a language model
# on easy tokens, and the tail still lands rows over V >= 1024 in all seven
# entropy bins
DEFAULT_CONCENTRATIONS = (
    (0.0001, 0.60),
    (0.001, 0.15),
    (0.005, 0.08),
    (0.02, 0.06),
    (0.05, 0.05),
    (0.15, 0.03),
    (1.0, 0.03),
)

_SALT_TARGET = 0x7A
_SALT_NOISE = 0x3C


@dataclass(frozen=True)
class ModelPairSpec:
    vocab: int
    order: int = 2
    seed: int = 0
    concentrations: tuple = DEFAULT_CONCENTRATIONS
    draft_noise: float = 0.3
    draft_mode: str = "mixture-perturb"
    pool_rows: int = 4096
    min_entropy_bins: int | None = None

    def __post_init__(self):
        if self.vocab < 2:
            raise ModelError(f"vocab must be >= 2, got {self.vocab}")
        if self.order < 1:
            raise ModelError(f"order must be >= 1, got {self.order}")
        if not 0.0 <= self.draft_noise <= 1.0:
            raise ModelError(f"draft_noise must lie in [0, 1], got {self.draft_noise}")
        if self.draft_mode not in ("mixture-perturb", "lower-order"):
            raise ModelError(f"unknown draft_mode {self.draft_mode!r}")
        conc = tuple((float(a), float(w)) for a, w in self.concentrations)
        object.__setattr__(self, "concentrations", conc)
        if not conc or any(a <= 0 or w < 0 for a, w in conc):
            raise ModelError("concentrations need positive alphas and non-negative weights")
        if abs(sum(w for _, w in conc) - 1.0) > 1e-9:
            raise ModelError("concentration weights must sum to 1")
        if self.pool_rows < 1:
            raise ModelError("pool_rows must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["concentrations"] = [list(c) for c in self.concentrations]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["concentrations"] = tuple(tuple(c) for c in d.get("concentrations", DEFAULT_CONCENTRATIONS))
        return cls(**d)


def _dirichlet_rows(gen, alphas, vocab):
    """Dirichlet samples computed in log space so tiny alphas do not underflow.

    log Gamma(a) = log Gamma(a + 1) + log(U) / a
    """
    n = alphas.shape[0]
    logg = np.log(gen.standard_gamma(alphas[:, None] + 1.0, size=(n, vocab)))
    logg += np.log(gen.random((n, vocab))) / alphas[:, None]
    logg -= logg.max(axis=1, keepdims=True)
    rows = np.exp(logg)
    rows /= rows.sum(axis=1, keepdims=True)
    return rows


def _make_pool(spec, name):
    gen = _rng.stream(spec.seed, name)
    alphas_choice = np.array([a for a, _ in spec.concentrations])
    weights = np.array([w for _, w in spec.concentrations])
    which = gen.choice(len(alphas_choice), size=spec.pool_rows, p=weights / weights.sum())
    return _dirichlet_rows(gen, alphas_choice[which], spec.vocab)


class _PoolSource:
    """Maps contexts to relabelled pool rows."""

    def __init__(self, pool, seed, salt):
        self.pool = pool
        self.seed = seed
        self.salt = salt
        self.vocab = pool.shape[1]
        self._ar = np.arange(self.vocab, dtype=np.int64)

    def __call__(self, ctx):
        h = _rng.hash_tokens(self.seed, self.salt, ctx)
        r = h % self.pool.shape[0]
        h2 = _rng.mix64(h)
        a = self._coprime(h2 >> 20)
        b = h2 % self.vocab
        return kernels.relabel(self.pool[r], a, b)

    def _coprime(self, x):
        v = self.vocab
        a = 1 + (x % (v - 1)) if v > 2 else 1
        while math.gcd(a, v) != 1:
            a += 1
        return a


class TabularLM:
    """Order-k next-token model over tokens ``0..vocab-1`` with BOS = vocab.

    ``table`` holds explicit rows keyed by k-token context tuples; contexts
    missing from it are synthesised by ``source`` when one is attached.
    """

    def __init__(self, vocab, order, table=None, source=None, seed=None, spec=None, role="target"):
        if vocab < 2:
            raise ModelError(f"vocab must be >= 2, got {vocab}")
        if order < 1:
            raise ModelError(f"order must be >= 1, got {order}")
        self.vocab = int(vocab)
        self.order = int(order)
        self.bos = self.vocab
        self.table = {} if table is None else {tuple(int(t) for t in k): np.asarray(v, dtype=np.float64)
                                               for k, v in table.items()}
        self.source = source
        self.seed = seed
        self.spec = spec
        self.role = role

    def context_key(self, context):
        ctx = [int(t) for t in context[-self.order:]] if self.order else []
        for t in ctx:
            if not 0 <= t < self.vocab and t != self.bos:
                raise ModelError(f"token {t} outside vocab of size {self.vocab}")
        if len(ctx) < self.order:
            ctx = [self.bos] * (self.order - len(ctx)) + ctx
        return tuple(ctx)

    def row(self, key):
        r = self.table.get(key)
        if r is not None:
            return r
        if self.source is None:
            raise ModelError(f"no row for context {key}")
        return self.source(key)

    def next_dist(self, context):
        return self.row(self.context_key(context))

    def all_contexts(self):
        """Every context reachable from BOS padding (BOS only as a prefix)."""
        out = []
        for n_bos in range(self.order, -1, -1):
            free = self.order - n_bos
            for idx in np.ndindex(*([self.vocab] * free)) if free else [()]:
                out.append((self.bos,) * n_bos + tuple(int(i) for i in idx))
        return out

    def n_contexts(self):
        return sum(self.vocab ** f for f in range(self.order + 1))

    def materialize(self):
        return TabularLM(self.vocab, self.order, {k: self.row(k) for k in self.all_contexts()},
                         seed=self.seed, spec=self.spec, role=self.role)


class _MixtureDraft:
    def __init__(self, target, noise, eps):
        self.target = target
        self.noise = noise
        self.eps = eps

    def __call__(self, key):
        return kernels.mix(self.target.row(key), self.noise(key), self.eps)


class _LowerOrderDraft:
    """Order k-1 draft: uniform average of target rows over the dropped token."""

    def __init__(self, target):
        self.target = target
        self.cache = {}

    def __call__(self, key):
        suffix = key[1:]
        hit = self.cache.get(suffix)
        if hit is not None:
            return hit
        t = self.target
        if suffix and suffix[0] == t.bos:
            row = t.row((t.bos,) + suffix)
        else:
            acc = np.zeros(t.vocab)
            for x in range(t.vocab):
                acc += t.row((x,) + suffix)
            row = acc / acc.sum()
        self.cache[suffix] = row
        return row


def gen_target(spec):
    if spec.min_entropy_bins is not None:
        reachable = sum(1 for lo in ENTROPY_BIN_EDGES[:-1] if lo < math.log(spec.vocab))
        if spec.min_entropy_bins > reachable:
            raise ModelError(
                f"vocab {spec.vocab} caps entropy at ln V = {math.log(spec.vocab):.3f} nats; "
                f"only {reachable} of the requested {spec.min_entropy_bins} entropy bins are reachable")
    pool = _make_pool(spec, "model-gen/target")
    return TabularLM(spec.vocab, spec.order, source=_PoolSource(pool, spec.seed, _SALT_TARGET),
                     seed=spec.seed, spec=spec, role="target")


def derive_draft(target, spec):
    if spec.draft_mode == "lower-order":
        if target.order < 2:
            raise ModelError("lower-order draft needs a target of order >= 2")
        # the draft keeps the target's context width; its rows ignore the oldest token
        return TabularLM(target.vocab, target.order, source=_LowerOrderDraft(target),
                         seed=spec.seed, spec=spec, role="draft")
    noise = _PoolSource(_make_pool(spec, "model-gen/noise"), spec.seed, _SALT_NOISE)
    return TabularLM(target.vocab, target.order, source=_MixtureDraft(target, noise, spec.draft_noise),
                     seed=spec.seed, spec=spec, role="draft")


def gen_pair(spec):
    target = gen_target(spec)
    return target, derive_draft(target, spec)


def next_dist(model, context):
    return model.next_dist(context)


def greedy_continuation(model, context, length):
    ctx = list(context)
    out = []
    for _ in range(int(length)):
        tok = int(np.argmax(model.next_dist(ctx)))
        out.append(tok)
        ctx.append(tok)
    return out


def entropy_histogram(model, contexts):
    """Counts of full-row entropies (nats) per bin of ENTROPY_BIN_EDGES."""
    counts = np.zeros(len(ENTROPY_BIN_EDGES) - 1, dtype=np.int64)
    for ctx in contexts:
        p = model.row(model.context_key(ctx))
        nz = p[p > 0]
        h = float(-(nz * np.log(nz)).sum())
        counts[min(int(h), 6)] += 1
    return counts


# ---------------------------------------------------------------------------
# model files
#
# Line 1 is a JSON header {vocab, order, seed, spec, role, rows, format}.
#   rows = "generated": no rows follow; the loader rebuilds them from spec.
#   format = "jsonl":   one {"context": [...], "probs": [...]} line per row.
#   format = "f64le":   the header line is followed by n_contexts * vocab
#                       little-endian float64 values, row-major, contexts in
#                       TabularLM.all_contexts() order.

def save_model(model, path, fmt="jsonl", materialize=None):
    path = Path(path)
    if materialize is None:
        materialize = model.source is None or model.n_contexts() * model.vocab <= 1_000_000
    if not materialize and model.spec is None:
        raise ModelError("a model without a spec must be saved with its rows")
    header = {"vocab": model.vocab, "order": model.order, "seed": model.seed, "role": model.role,
              "spec": None if model.spec is None else model.spec.to_dict(),
              "rows": "explicit" if materialize else "generated", "format": fmt}
    if not materialize:
        path.write_text(json.dumps(header, sort_keys=True) + "\n")
        return
    keys = model.all_contexts() if model.source is not None else sorted(model.table)
    if fmt == "jsonl":
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for k in keys:
                fh.write(json.dumps({"context": list(k), "probs": model.row(k).tolist()}) + "\n")
    elif fmt == "f64le":
        if model.source is None and len(keys) != model.n_contexts():
            raise ModelError("dense binary format needs every context")
        keys = model.all_contexts()
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            for k in keys:
                fh.write(np.asarray(model.row(k), dtype="<f8").tobytes())
    else:
        raise ModelError(f"unknown model file format {fmt!r}")


def load_model(path):
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ModelError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: malformed header: {exc}") from None
    for key in ("vocab", "order", "rows"):
        if key not in header:
            raise ModelError(f"{path}: header lacks {key!r}")
    spec = ModelPairSpec.from_dict(header["spec"]) if header.get("spec") else None
    role = header.get("role", "target")
    if header["rows"] == "generated":
        if spec is None:
            raise ModelError(f"{path}: generated rows need a spec")
        target = gen_target(spec)
        return target if role == "target" else derive_draft(target, spec)
    vocab, order = int(header["vocab"]), int(header["order"])
    table = {}
    body = raw[nl + 1:]
    if header.get("format", "jsonl") == "f64le":
        probe = TabularLM(vocab, order)
        keys = probe.all_contexts()
        expect = len(keys) * vocab * 8
        if len(body) != expect:
            raise ModelError(f"{path}: binary body has {len(body)} bytes, expected {expect}")
        dense = np.frombuffer(body, dtype="<f8").reshape(len(keys), vocab)
        table = {k: dense[i].astype(np.float64) for i, k in enumerate(keys)}
    else:
        for line in body.decode().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            probs = np.asarray(rec["probs"], dtype=np.float64)
            if probs.shape != (vocab,):
                raise ModelError(f"{path}: row for {rec['context']} has {probs.size} entries, expected {vocab}")
            table[tuple(rec["context"])] = probs
    return TabularLM(vocab, order, table, seed=header.get("seed"), spec=spec, role=role)


def save_pair(spec, target, draft, out_dir, fmt="jsonl", materialize=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(target, out / "target.model", fmt, materialize)
    save_model(draft, out / "draft.model", fmt, materialize)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")


def load_pair(out_dir):
    out = Path(out_dir)
    return load_model(out / "target.model"), load_model(out / "draft.model")


def make_prompts(vocab, n, length, seed):
    gen = _rng.stream(seed, "prompts")
    return [gen.integers(0, vocab, size=length).tolist() for _ in range(n)]
