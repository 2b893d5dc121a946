"""Tree construction strategies: C2T, EAGLE-2 expand/rerank, static, chain."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .features import DEFAULT_TOP_M, truncated_entropy
from .tree import TokenTree

STRATEGIES = ("c2t", "eagle2", "static", "chain")
CHAIN_STOPS = ("none", "max_prob", "joint_prob", "classifier")

# 26 draft nodes, the EAGLE-1 tree size; per-layer counts are our choice
EAGLE1_SIZED_SHAPE = (4, 8, 7, 4, 2, 1)


@dataclass(frozen=True)
class DraftConfig:
    strategy: str = "c2t"
    K: int = 15
    d_max: int = 10
    beta: float = 0.5
    N: int | None = None
    second_topk: bool = True
    chain_stop: str = "none"
    chain_threshold: float | None = None
    max_len: int = 10
    top_m: int = DEFAULT_TOP_M
    shape: tuple = EAGLE1_SIZED_SHAPE

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.N is not None and self.N < 1:
            raise ValueError("N must be >= 1")
        if self.chain_stop not in CHAIN_STOPS:
            raise ValueError(f"unknown chain_stop {self.chain_stop!r}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


# named chain-mode presets
CHAIN_PRESETS = {
    "dymax": DraftConfig(strategy="chain", chain_stop="max_prob", chain_threshold=0.3, max_len=10),
    "dyjoint": DraftConfig(strategy="chain", chain_stop="joint_prob", chain_threshold=0.08, max_len=10),
    "c2t-chain": DraftConfig(strategy="chain", chain_stop="classifier", beta=0.85, max_len=10),
}


def _tail(context, order):
    return tuple(context[-order:]) if order else ()


def _child_tail(parent_tail, tok, order):
    return (parent_tail + (tok,))[-order:]


def draft_c2t(draft, classifier, context, config, stats=None):
    """Classifier-pruned layer-by-layer tree construction.

    Each frontier node proposes its top-K tokens by generation probability;
    the layer's pool is capped at K*K candidates by joint probability. Every
    candidate gets a confidence from (P, H, d); those under beta are dropped
    and, with ``second_topk``, at most K survivors by confidence are kept.
    Drafting stops at d_max rounds or once no candidate's confidence
    strictly exceeds beta. Node depth features count rounds from 0.
    ``stats`` (optional dict) accumulates draft_calls, scored and kept.
    """
    K, beta, M = config.K, config.beta, config.top_m
    order = draft.order
    tree = TokenTree.with_root(context[-1] if context else -1)
    tails = {0: _tail(context, order)}
    frontier = [0]
    confs = np.array([1.0])  # root confidence
    d = 0
    while d < config.d_max and np.any(confs > beta):
        par, tok, prob, joint, ent = [], [], [], [], []
        for f in frontier:
            dist = draft.row(draft.context_key(tails[f]))
            idx = kernels.topk(dist, K)
            H = kernels.truncated_entropy_raw(dist, M)
            if stats is not None:
                stats["draft_calls"] += 1
            fP = tree.nodes[f].P
            for t in idx:
                par.append(f)
                tok.append(int(t))
                prob.append(float(dist[t]))
                joint.append(fP * float(dist[t]))
                ent.append(H)
        if not par:
            break
        n = len(par)
        cand = np.arange(n)
        if n > K * K:
            key = np.lexsort((cand, np.array(tok), -np.array(joint)))
            cand = np.sort(key[:K * K])
        X = np.column_stack((np.array(joint)[cand], np.array(ent)[cand], np.full(cand.size, float(d))))
        confs = classifier(X)
        alive = np.flatnonzero(confs >= beta)
        if stats is not None:
            stats["scored"] += cand.size
        if config.second_topk and alive.size > K:
            sub_tok = np.array(tok)[cand[alive]]
            sub_joint = np.array(joint)[cand[alive]]
            ranked = np.lexsort((alive, sub_tok, -sub_joint, -confs[alive]))
            alive = np.sort(alive[ranked[:K]])
        tree.new_layer()
        new_frontier = []
        for a in alive:
            c = cand[a]
            (nid,) = tree.attach_children(par[c], [tok[c]], [prob[c]], H=ent[c], d=d)
            tree.nodes[nid].C = float(confs[a])
            tails[nid] = _child_tail(tails[par[c]], tok[c], order)
            new_frontier.append(nid)
        if stats is not None:
            stats["kept"] += len(new_frontier)
        if not tree.layers[-1]:
            tree.layers.pop()
        frontier = new_frontier
        d += 1
    return tree


def _eagle2_expand(draft, context, K, d_max, M, with_entropy):
    order = draft.order
    tree = TokenTree.with_root(context[-1] if context else -1)
    tails = {0: _tail(context, order)}
    frontier = [0]
    for d in range(d_max):
        tree.new_layer()
        for f in frontier:
            dist = draft.row(draft.context_key(tails[f]))
            idx = kernels.topk(dist, K)
            H = kernels.truncated_entropy_raw(dist, M) if with_entropy else 0.0
            ids = tree.attach_children(f, idx.tolist(), dist[idx].tolist(), H=H, d=d)
            for nid, t in zip(ids, idx):
                tails[nid] = _child_tail(tails[f], int(t), order)
        layer = tree.layers[-1]
        if d + 1 < d_max:
            P = np.array([tree.nodes[i].P for i in layer])
            toks = np.array([tree.nodes[i].token for i in layer])
            ids = np.array(layer)
            best = np.lexsort((ids, toks, -P))[:K]
            frontier = sorted(ids[best].tolist())
    return tree


@dataclass
class FullExpansion:
    """Array form of the EAGLE-2 expansion tree; index 0 is the root.

    Node ids match ``_eagle2_expand``. Children of an expanded node occupy
    the contiguous block ``child_start[i] : child_start[i] + K``
    (``child_start[i] == -1`` for leaves).
    """
    parent: np.ndarray
    token: np.ndarray
    p: np.ndarray
    P: np.ndarray
    depth: np.ndarray
    H: np.ndarray
    child_start: np.ndarray
    K: int

    def __len__(self):
        return self.parent.size

    def child(self, node, tok):
        s = self.child_start[node]
        if s < 0:
            return -1
        hit = np.flatnonzero(self.token[s:s + self.K] == tok)
        return int(s + hit[0]) if hit.size else -1

    def rank_order(self):
        """Non-root ids in rerank order (see ``rerank``)."""
        ids = np.arange(1, self.parent.size)
        return ids[np.lexsort((ids, self.token[1:], self.depth[1:], -self.P[1:]))]


def expand_full(draft, context, K, d_max, top_m=None):
    """Same tree as ``_eagle2_expand`` without building TreeNode objects.

    Entropies are filled only when ``top_m`` is given.
    """
    order = draft.order
    par = [np.array([-1])]
    tok = [np.array([context[-1] if context else -1])]
    pp = [np.array([1.0])]
    PP = [np.array([1.0])]
    dep = [np.array([0])]
    HH = [np.array([0.0])]
    n = 1
    child_start = {}
    tails = {0: _tail(context, order)}
    frontier = [0]
    P_all = np.array([1.0])
    tok_all = tok[0]
    for d in range(d_max):
        lp, lt, lprob, lH = [], [], [], []
        for f in frontier:
            dist = draft.row(draft.context_key(tails[f]))
            idx = kernels.topk(dist, K)
            child_start[f] = n + len(lt) * K
            lt.append(idx)
            lprob.append(dist[idx])
            lH.append(kernels.truncated_entropy_raw(dist, top_m) if top_m else 0.0)
        fr = np.array(frontier)
        lpar = np.repeat(fr, K)
        ltok = np.concatenate(lt)
        lp_ = np.concatenate(lprob)
        lP = P_all[lpar] * lp_
        par.append(lpar)
        tok.append(ltok)
        pp.append(lp_)
        PP.append(lP)
        dep.append(np.full(lpar.size, d + 1))
        HH.append(np.repeat(np.array(lH, dtype=np.float64), K))
        ids = np.arange(n, n + lpar.size)
        P_all = np.concatenate((P_all, lP))
        tok_all = np.concatenate((tok_all, ltok))
        n += lpar.size
        if d + 1 < d_max:
            best = np.lexsort((ids, ltok, -lP))[:K]
            frontier = sorted(ids[best].tolist())
            for i in frontier:
                j = i - ids[0]
                tails[i] = _child_tail(tails[int(lpar[j])], int(ltok[j]), order)
    cs = np.full(n, -1, dtype=np.int64)
    for f, s in child_start.items():
        cs[f] = s
    return FullExpansion(np.concatenate(par), np.concatenate(tok).astype(np.int64), np.concatenate(pp),
                         P_all, np.concatenate(dep), np.concatenate(HH), cs, K)


def rerank(tree, N):
    """Top-N non-root nodes by joint probability.

    Ties go to the shallower node, then the smaller token, then the smaller id.
    """
    ids = np.arange(1, len(tree))
    if N is None or N >= ids.size:
        return ids.tolist()
    P = np.array([n.P for n in tree.nodes[1:]])
    depth = tree.depths()[1:]
    toks = np.array([n.token for n in tree.nodes[1:]])
    order = np.lexsort((ids, toks, depth, -P))
    return sorted(ids[order[:N]].tolist())


def draft_eagle2(draft, context, config, with_entropy=False):
    """Expand to T1 guided by joint probability, then rerank to the top-N set T2."""
    t1 = _eagle2_expand(draft, context, config.K, config.d_max, config.top_m, with_entropy)
    return t1, rerank(t1, config.N)


def _static_positions(n_parents, count, vocab):
    # (parent slot j, child rank r) ordered by anti-diagonal j + r, then j
    pos = []
    s = 0
    while len(pos) < count:
        progressed = False
        for j in range(min(n_parents, s + 1)):
            r = s - j
            if r < vocab:
                pos.append((j, r))
                progressed = True
                if len(pos) == count:
                    break
        if not progressed and s >= n_parents + vocab:
            raise ValueError(f"cannot place {count} nodes under {n_parents} parents with vocab {vocab}")
        s += 1
    return pos


def draft_static(draft, context, shape, stats=None):
    """Fill a preset tree shape (nodes per layer) with the draft's top tokens.

    Within a layer, slots go to (parent, rank) pairs along anti-diagonals so the
    leftmost chain (first parent, top token) is always present.
    """
    shape = [int(s) for s in shape]
    if not shape:
        raise ValueError("shape must be non-empty")
    order = draft.order
    tree = TokenTree.with_root(context[-1] if context else -1)
    tails = {0: _tail(context, order)}
    parents = [0]
    for d, count in enumerate(shape):
        if count < 1:
            raise ValueError("every layer needs at least one node")
        if count > len(parents) * draft.vocab:
            raise ValueError(f"layer {d} asks for {count} nodes but {len(parents)} parents x vocab "
                             f"{draft.vocab} allows {len(parents) * draft.vocab}")
        positions = _static_positions(len(parents), count, draft.vocab)
        by_parent = {}
        for j, r in positions:
            by_parent.setdefault(j, []).append(r)
        tree.new_layer()
        new_parents = []
        for j in sorted(by_parent):
            f = parents[j]
            dist = draft.row(draft.context_key(tails[f]))
            if stats is not None:
                stats["draft_calls"] += 1
            ranks = by_parent[j]
            idx = kernels.topk(dist, max(ranks) + 1)
            chosen = [int(idx[r]) for r in sorted(ranks)]
            ids = tree.attach_children(f, chosen, [float(dist[t]) for t in chosen],
                                       H=kernels.truncated_entropy_raw(dist, DEFAULT_TOP_M), d=d)
            for nid, t in zip(ids, chosen):
                tails[nid] = _child_tail(tails[f], t, order)
            new_parents.extend(ids)
        parents = new_parents
    return tree


def draft_chain(draft, classifier, context, config, stats=None):
    """Greedy single-branch draft with an optional early-exit criterion.

    The emitted token is always kept; the criterion is then checked on it and
    drafting halts when it fires.
    """
    stop = config.chain_stop
    if stop == "classifier" and classifier is None:
        raise ValueError("classifier stop criterion needs a classifier")
    thr = config.chain_threshold
    if stop in ("max_prob", "joint_prob") and thr is None:
        raise ValueError(f"{stop} stop criterion needs chain_threshold")
    order = draft.order
    tree = TokenTree.with_root(context[-1] if context else -1)
    tail = _tail(context, order)
    cur = 0
    for step in range(config.max_len):
        dist = draft.row(draft.context_key(tail))
        if stats is not None:
            stats["draft_calls"] += 1
        tok = int(np.argmax(dist))
        H = kernels.truncated_entropy_raw(dist, config.top_m)
        tree.new_layer()
        (cur,) = tree.attach_children(cur, [tok], [float(dist[tok])], H=H, d=step)
        node = tree.nodes[cur]
        tail = _child_tail(tail, tok, order)
        if stop == "max_prob":
            halt = float(dist[tok]) < thr
        elif stop == "joint_prob":
            halt = node.P < thr
        elif stop == "classifier":
            node.C = float(classifier(np.array([[node.P, node.H, float(node.d)]]))[0])
            halt = node.C < config.beta
            if stats is not None:
                stats["scored"] += 1
                stats["kept"] += 1
        else:
            halt = False
        if halt:
            break
    return tree


def build_tree(draft, classifier, context, config, stats=None):
    """Dispatch on ``config.strategy``; returns the tree to be verified."""
    s = config.strategy
    if s == "c2t":
        if classifier is None:
            raise ValueError("c2t strategy needs a classifier")
        return draft_c2t(draft, classifier, context, config, stats)
    if s == "eagle2":
        t1, t2 = draft_eagle2(draft, context, config)
        if stats is not None:
            stats["draft_calls"] += 1 + config.K * (config.d_max - 1)
        return t1 if len(t2) == len(t1) - 1 else t1.subtree(t2)
    if s == "static":
        return draft_static(draft, context, config.shape, stats)
    return draft_chain(draft, classifier, context, config, stats)
