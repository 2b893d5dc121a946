"""Classifier features: joint probability P, truncated entropy H, depth d."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_TOP_M = 1000


@dataclass(frozen=True)
class FeatureVector:
    P: float
    H: float
    d: int

    def as_array(self):
        return np.array([self.P, self.H, float(self.d)])


def truncated_entropy(dist, M=DEFAULT_TOP_M, check=True):
    """Entropy in nats over the ``M`` largest probabilities of ``dist``.

    Ties at the cut go to the smaller token index; zero entries add nothing.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    dist = np.asarray(dist, dtype=np.float64)
    if check:
        if dist.ndim != 1 or dist.size == 0:
            raise ValueError("expected a non-empty 1-d probability vector")
        if not np.all(np.isfinite(dist)) or dist.min() < 0.0 or abs(dist.sum() - 1.0) > 1e-6:
            raise ValueError("input is not a probability distribution")
    return kernels.truncated_entropy_raw(dist, int(M))


def full_entropy(dist):
    """Entropy over the whole support, summed in the same order as the truncated form."""
    dist = np.asarray(dist, dtype=np.float64)
    return kernels.truncated_entropy_raw(dist, max(dist.size, 1))


def node_features(tree, node_id):
    """Features stored on a drafted node.

    H is cached on the node at expansion time (entropy of the distribution it
    was drawn from, so siblings share it).
    """
    if node_id == 0:
        raise ValueError("the root gets no classifier features (its confidence is fixed at 1)")
    node = tree.nodes[node_id]
    return FeatureVector(node.P, node.H, node.d)


def recompute_features(tree, node_id, model, context, M=DEFAULT_TOP_M):
    """Recompute a node's features from scratch via the model (audit path)."""
    if node_id == 0:
        raise ValueError("the root gets no classifier features")
    path = tree.path_to_root(node_id)
    P = 1.0
    for i in path[1:]:
        P *= tree.nodes[i].p
    parent_tokens = tree.path_tokens(tree.nodes[node_id].parent)
    dist = model.next_dist(list(context) + parent_tokens)
    return FeatureVector(P, truncated_entropy(dist, M), tree.nodes[node_id].d)
