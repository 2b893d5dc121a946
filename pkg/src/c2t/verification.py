"""Greedy (argmax-match) verification of a token tree by the target model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class VerifyResult:
    tau: int
    gamma: int
    accepted_path: list
    bonus_token: int


def verify_greedy(tree, target, context):
    """Walk the tree following the target's argmax tokens.

    Every non-root node counts toward gamma. Accepted flags are written back
    onto the nodes (root untouched).
    """
    for node in tree.nodes[1:]:
        if not 0 <= node.token < target.vocab:
            raise ValueError(f"node {node.id} carries token {node.token} outside target vocab {target.vocab}")
    kids = [dict() for _ in tree.nodes]
    for node in tree.nodes[1:]:
        # duplicate sibling tokens cannot come out of top-K; first one wins
        kids[node.parent].setdefault(node.token, node.id)
        node.accepted = False
    key = target.context_key(context) if context else target.context_key([])
    path = [0]
    cur = 0
    order = target.order
    tail = list(key)
    while True:
        tok = int(np.argmax(target.row(tuple(tail[-order:]))))
        nxt = kids[cur].get(tok)
        if nxt is None:
            bonus = tok
            break
        tree.nodes[nxt].accepted = True
        path.append(nxt)
        tail.append(tok)
        cur = nxt
    return VerifyResult(len(path) - 1, len(tree) - 1, path, bonus)


def accepted_path_arrays(exp, target, context):
    """Greedy walk over a ``FullExpansion``; returns (path ids without root, bonus)."""
    order = target.order
    tail = list(target.context_key(context))
    path = []
    cur = 0
    while True:
        tok = int(np.argmax(target.row(tuple(tail[-order:]))))
        nxt = exp.child(cur, tok)
        if nxt < 0:
            return path, tok
        path.append(nxt)
        tail.append(tok)
        cur = nxt
