"""Token tree: append-only node storage in topological order."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class TreeError(ValueError):
    pass


@dataclass(slots=True)
class TreeNode:
    id: int
    parent: int | None
    token: int
    p: float
    P: float
    H: float = 0.0
    d: int = 0
    C: float | None = None
    accepted: bool | None = None

    def to_dict(self):
        return {"id": self.id, "parent": self.parent, "token": self.token,
                "p": self.p, "P": self.P, "H": self.H, "d": self.d,
                "C": self.C, "accepted": self.accepted}


@dataclass
class TokenTree:
    """Draft token tree.

    Node 0 is the root (the last token already fixed by the target model).
    ``layers[k]`` holds the ids of nodes appended during drafting round k;
    the root is not part of any layer.
    """
    nodes: list[TreeNode] = field(default_factory=list)
    layers: list[list[int]] = field(default_factory=list)

    @classmethod
    def with_root(cls, token=-1):
        tree = cls()
        tree.nodes.append(TreeNode(0, None, int(token), 1.0, 1.0, C=1.0))
        return tree

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self):
        return self.nodes[0]

    def new_layer(self):
        self.layers.append([])
        return len(self.layers) - 1

    def attach_children(self, parent_id, tokens, probs, H=0.0, d=0):
        """Append one child per token under ``parent_id`` to the current layer.

        Joint probability is ``parent.P * p``. Returns the new ids.
        """
        if not 0 <= parent_id < len(self.nodes):
            raise TreeError(f"unknown parent id {parent_id}")
        tokens = list(tokens)
        probs = list(probs)
        if len(tokens) != len(probs):
            raise TreeError(f"got {len(tokens)} tokens but {len(probs)} probabilities")
        if not tokens:
            return []
        for q in probs:
            if not 0.0 <= q <= 1.0:
                raise TreeError(f"probability {q!r} outside [0, 1]")
        if not self.layers:
            self.new_layer()
        parent_P = self.nodes[parent_id].P
        layer = self.layers[-1]
        ids = []
        for tok, q in zip(tokens, probs):
            nid = len(self.nodes)
            q = float(q)
            self.nodes.append(TreeNode(nid, parent_id, int(tok), q, parent_P * q, float(H), int(d)))
            layer.append(nid)
            ids.append(nid)
        return ids

    def depth(self, node_id):
        """Edges between the root and ``node_id``."""
        n = 0
        node = self.nodes[node_id]
        while node.parent is not None:
            n += 1
            node = self.nodes[node.parent]
        return n

    def depths(self):
        out = np.zeros(len(self.nodes), dtype=np.int64)
        for node in self.nodes[1:]:
            out[node.id] = out[node.parent] + 1
        return out

    def max_depth(self):
        return int(self.depths().max()) if self.nodes else 0

    def path_to_root(self, node_id):
        if not 0 <= node_id < len(self.nodes):
            raise TreeError(f"unknown node id {node_id}")
        path = []
        cur = node_id
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur].parent
        path.reverse()
        return path

    def path_tokens(self, node_id):
        """Tokens on the path, root excluded."""
        return [self.nodes[i].token for i in self.path_to_root(node_id)[1:]]

    def children(self):
        kids = [[] for _ in self.nodes]
        for node in self.nodes[1:]:
            kids[node.parent].append(node.id)
        return kids

    def ancestor_mask(self):
        n = len(self.nodes)
        mask = np.zeros((n, n), dtype=np.uint8)
        for node in self.nodes:
            if node.parent is not None:
                mask[node.id] = mask[node.parent]
            mask[node.id, node.id] = 1
        return mask

    def is_connected_subtree(self, node_set):
        """True iff ``node_set`` plus the root is closed under the parent relation."""
        members = set(int(i) for i in node_set)
        members.add(0)
        for i in members:
            if not 0 <= i < len(self.nodes):
                raise TreeError(f"unknown node id {i}")
            parent = self.nodes[i].parent
            if parent is not None and parent not in members:
                return False
        return True

    def subtree(self, node_set):
        """Copy containing the root and ``node_set`` with ids renumbered densely.

        Layer membership is kept; empty layers are dropped.
        """
        if not self.is_connected_subtree(node_set):
            raise TreeError("node set is not a connected subtree")
        keep = sorted(set(int(i) for i in node_set) | {0})
        remap = {old: new for new, old in enumerate(keep)}
        out = TokenTree()
        for old in keep:
            src = self.nodes[old]
            out.nodes.append(TreeNode(remap[old], None if src.parent is None else remap[src.parent],
                                      src.token, src.p, src.P, src.H, src.d, src.C, src.accepted))
        for layer in self.layers:
            kept = [remap[i] for i in layer if i in remap]
            if kept:
                out.layers.append(kept)
        return out

    def validate(self, rtol=1e-12):
        """Raise TreeError if a structural invariant is violated."""
        if not self.nodes:
            raise TreeError("empty tree")
        root = self.nodes[0]
        if root.parent is not None or root.p != 1.0 or root.P != 1.0:
            raise TreeError("malformed root")
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise TreeError(f"node {i} stored with id {node.id}")
            if i == 0:
                continue
            if node.parent is None or not 0 <= node.parent < i:
                raise TreeError(f"node {i} has parent {node.parent} out of topological order")
            expect = self.nodes[node.parent].P * node.p
            if abs(node.P - expect) > rtol * max(abs(expect), 1e-300):
                raise TreeError(f"node {i}: P={node.P} but parent.P*p={expect}")
        layer_of = {}
        for k, layer in enumerate(self.layers):
            for nid in layer:
                layer_of[nid] = k
        if len(layer_of) != len(self.nodes) - 1:
            raise TreeError("layers do not cover every non-root node exactly once")
        for nid, k in layer_of.items():
            parent = self.nodes[nid].parent
            if parent != 0 and layer_of.get(parent, k) >= k:
                raise TreeError(f"node {nid} in layer {k} has parent in a later layer")

    # -- serialisation -------------------------------------------------------

    def to_jsonl(self, header):
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(json.dumps(n.to_dict(), sort_keys=True) for n in self.nodes)
        return "\n".join(lines) + "\n"

    def save(self, path, header):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl(header))

    @classmethod
    def from_jsonl(cls, text):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            raise TreeError("empty tree file")
        header, body = rows[0], rows[1:]
        tree = cls()
        layer_idx = {}
        for row in body:
            tree.nodes.append(TreeNode(row["id"], row["parent"], row["token"], row["p"], row["P"],
                                       row["H"], row["d"], row["C"], row["accepted"]))
        # layers are rebuilt from the depth counter d, one per distinct round
        for node in tree.nodes[1:]:
            if node.d not in layer_idx:
                layer_idx[node.d] = len(tree.layers)
                tree.layers.append([])
            tree.layers[layer_idx[node.d]].append(node.id)
        tree.validate()
        return header, tree

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_jsonl(fh.read())
