import numpy as np
import pytest

from c2t.classifier import LabeledSet
from c2t.datagen import (collect_labeled_trees, corpus_sha256, full_tree_size, read_corpus, split_dataset,
                         subsample_trees, write_corpus)
from c2t.drafting import _eagle2_expand
from c2t.features import recompute_features
from c2t.models import make_prompts
from c2t.verification import verify_greedy


@pytest.fixture(scope="module")
def collected(small_pair):
    _, target, draft = small_pair
    prompts = make_prompts(64, 4, 5, seed=3)
    header, corpus = collect_labeled_trees(draft, target, prompts, 3, 4, 10, M=1000)
    return prompts, header, corpus


def test_small_tree_size(small_pair):
    _, target, draft = small_pair
    _, corpus = collect_labeled_trees(draft, target, [[1, 2]], 2, 2, 3)
    assert full_tree_size(2, 2) == 7
    assert np.bincount(corpus.tree_id).tolist() == [6, 6, 6]  # root excluded


@pytest.mark.parametrize("K,d_max", [(1, 1), (2, 2), (3, 3), (10, 11), (4, 1)])
def test_full_tree_size_formula(K, d_max):
    layers = K + sum(K * K for _ in range(d_max - 1))
    assert full_tree_size(K, d_max) == 1 + layers


def test_header(collected):
    _, header, corpus = collected
    assert header["K"] == 3 and header["d_max"] == 4 and header["count"] == 10
    assert header["model_pair_spec"]["vocab"] == 64
    assert len(corpus) == 10 * (full_tree_size(3, 4) - 1)


def test_labels_equal_tau_and_features_recompute(small_pair, collected):
    _, target, draft = small_pair
    prompts, header, corpus = collected
    # replay the rounds with the tree-object path
    tid = 0
    for prompt in prompts:
        ctx = list(prompt)
        for _ in range(3):
            if tid >= 10:
                break
            tree = _eagle2_expand(draft, ctx, 3, 4, 1000, True)
            res = verify_greedy(tree, target, ctx)
            rows = corpus.tree_id == tid
            assert int(corpus.label[rows].sum()) == res.tau
            assert np.flatnonzero(corpus.label[rows]).tolist() == [i - 1 for i in res.accepted_path[1:]]
            for nid in (1, 5, len(tree) - 1):
                i = np.flatnonzero(rows)[nid - 1]
                fv = recompute_features(tree, nid, draft, ctx)
                assert (corpus.P[i], corpus.H[i], corpus.d[i]) == (fv.P, fv.H, fv.d)
            ctx += [tree.nodes[i].token for i in res.accepted_path[1:]] + [res.bonus_token]
            tid += 1


def test_corpus_roundtrip_and_digest(tmp_path, collected):
    _, header, corpus = collected
    write_corpus(tmp_path / "c.jsonl", header, corpus)
    import hashlib
    assert hashlib.sha256((tmp_path / "c.jsonl").read_bytes()).hexdigest() == corpus_sha256(header, corpus)
    h2, data = read_corpus(tmp_path / "c.jsonl")
    assert h2 == header
    ref = corpus.to_set()
    assert np.array_equal(data.X, ref.X) and np.array_equal(data.y, ref.y)


def test_empty_prompts_rejected(small_pair):
    with pytest.raises(ValueError):
        collect_labeled_trees(small_pair[2], small_pair[1], [], 2, 2, 1)


def _trees(n, per=3):
    tid = np.repeat(np.arange(n), per)
    return LabeledSet(np.zeros((tid.size, 3)), np.zeros(tid.size), tid)


def test_split_95_5():
    tr, va = split_dataset(_trees(100), 0.95, 0)
    assert np.unique(tr.tree_id).size == 95 and np.unique(va.tree_id).size == 5
    assert len(tr) + len(va) == 300
    assert not set(tr.tree_id) & set(va.tree_id)


def test_split_deterministic():
    a = split_dataset(_trees(40), 0.8, 5)
    b = split_dataset(_trees(40), 0.8, 5)
    assert np.array_equal(a[1].tree_id, b[1].tree_id)


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1])
def test_split_ratio_checked(ratio):
    with pytest.raises(ValueError):
        split_dataset(_trees(10), ratio, 0)


def test_split_needs_two_trees():
    with pytest.raises(ValueError):
        split_dataset(_trees(1), 0.5, 0)


def test_subsample_keeps_whole_trees():
    s = subsample_trees(_trees(50, per=4), 0.1, 1)
    assert np.unique(s.tree_id).size == 5 and len(s) == 20
