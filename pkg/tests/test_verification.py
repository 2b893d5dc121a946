import numpy as np
import pytest

from c2t.drafting import expand_full
from c2t.models import greedy_continuation
from c2t.tree import TokenTree
from c2t.verification import accepted_path_arrays, verify_greedy
from conftest import random_table_model
from oracles import recursive_verify


def random_tree_over(vocab, seed, n):
    """Random tree whose tokens are drawn from a small alphabet so matches happen.

    Siblings carry distinct tokens, as every drafting strategy guarantees.
    """
    gen = np.random.default_rng(seed)
    t = TokenTree.with_root(0)
    depth = {0: 0}
    used = {0: set()}
    for _ in range(n):
        parent = int(gen.integers(0, len(t)))
        free = sorted(set(range(vocab)) - used[parent])
        if not free:
            continue
        tok = int(gen.choice(free))
        while len(t.layers) <= depth[parent]:
            t.new_layer()
        saved = t.layers
        t.layers = saved[:depth[parent] + 1]
        (nid,) = t.attach_children(parent, [tok], [float(gen.uniform(0.1, 1))], d=depth[parent])
        t.layers = saved
        depth[nid] = depth[parent] + 1
        used[parent].add(tok)
        used[nid] = set()
    return t


def test_matches_recursive_oracle_on_1000_cases():
    mismatches = 0
    for case in range(1000):
        gen = np.random.default_rng(case)
        vocab = int(gen.integers(2, 6))
        target = random_table_model(vocab, int(gen.integers(1, 3)), seed=case, alpha=0.5)
        tree = random_tree_over(vocab, case + 10_000, int(gen.integers(0, 40)))
        ctx = gen.integers(0, vocab, size=int(gen.integers(0, 4))).tolist()
        res = verify_greedy(tree, target, ctx)
        tau, path, bonus = recursive_verify(tree, target, ctx)
        mismatches += (res.tau, res.accepted_path, res.bonus_token) != (tau, path, bonus)
        assert res.gamma == len(tree) - 1
    assert mismatches == 0


def test_greedy_chain_fully_accepted(small_pair):
    _, target, _ = small_pair
    ctx = [4, 5]
    toks = greedy_continuation(target, ctx, 6)
    t = TokenTree.with_root(ctx[-1])
    cur = 0
    for i, tok in enumerate(toks):
        t.new_layer()
        (cur,) = t.attach_children(cur, [tok], [0.5], d=i)
    res = verify_greedy(t, target, ctx)
    assert res.tau == 6 and res.gamma == 6
    assert res.bonus_token == greedy_continuation(target, ctx, 7)[-1]


def test_root_only(small_pair):
    res = verify_greedy(TokenTree.with_root(1), small_pair[1], [1])
    assert (res.tau, res.gamma, res.accepted_path) == (0, 0, [0])


def test_labels_written_back():
    target = random_table_model(3, 1, seed=2, alpha=0.5)
    tree = random_tree_over(3, 7, 30)
    res = verify_greedy(tree, target, [1])
    flagged = [n.id for n in tree.nodes[1:] if n.accepted]
    assert flagged == res.accepted_path[1:]
    assert sum(n.accepted for n in tree.nodes[1:]) == res.tau


def test_sibling_order_does_not_matter():
    target = random_table_model(4, 1, seed=3, alpha=0.5)
    a = TokenTree.with_root(0)
    a.attach_children(0, [0, 1, 2, 3], [0.1, 0.2, 0.3, 0.4])
    b = TokenTree.with_root(0)
    b.attach_children(0, [3, 2, 1, 0], [0.4, 0.3, 0.2, 0.1])
    assert verify_greedy(a, target, [2]).tau == verify_greedy(b, target, [2]).tau == 1


def test_adding_nodes_never_lowers_tau():
    target = random_table_model(3, 2, seed=4, alpha=0.5)
    for seed in range(50):
        big = random_tree_over(3, seed, 40)
        keep = sorted(range(1, 21))
        small = big.subtree(keep) if big.is_connected_subtree(keep) else TokenTree.with_root(0)
        assert verify_greedy(big, target, [0, 1]).tau >= verify_greedy(small, target, [0, 1]).tau


def test_duplicate_sibling_tokens_take_the_first():
    target = random_table_model(2, 1, seed=0, alpha=0.5)
    best = int(np.argmax(target.next_dist([0])))
    t = TokenTree.with_root(0)
    t.attach_children(0, [best, best], [0.5, 0.5])
    assert verify_greedy(t, target, [0]).accepted_path == [0, 1]


def test_out_of_vocab_token_rejected():
    target = random_table_model(3, 1, seed=1)
    t = TokenTree.with_root(0)
    t.attach_children(0, [7], [0.5])
    with pytest.raises(ValueError, match="outside target vocab"):
        verify_greedy(t, target, [0])


def test_array_walk_matches_tree_walk(small_pair):
    from c2t.drafting import _eagle2_expand
    _, target, draft = small_pair
    for ctx in ([1, 2], [17], [50, 51, 52]):
        exp = expand_full(draft, ctx, 5, 6)
        tree = _eagle2_expand(draft, ctx, 5, 6, 1000, False)
        res = verify_greedy(tree, target, ctx)
        path, bonus = accepted_path_arrays(exp, target, ctx)
        assert path == res.accepted_path[1:] and bonus == res.bonus_token
