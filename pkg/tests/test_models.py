import math

import numpy as np
import pytest

from c2t.models import (ModelError, ModelPairSpec, TabularLM, derive_draft, entropy_histogram, gen_pair,
                        gen_target, greedy_continuation, load_model, load_pair, make_prompts, next_dist,
                        save_model, save_pair)
from conftest import random_table_model


def test_vocab2_single_concentration_rows_valid():
    spec = ModelPairSpec(vocab=2, order=1, seed=3, concentrations=((0.5, 1.0),))
    m = gen_target(spec)
    for k in m.all_contexts():
        r = m.row(k)
        assert r.shape == (2,) and abs(r.sum() - 1) < 1e-9 and r.min() >= 0


def test_same_spec_same_tables():
    spec = ModelPairSpec(vocab=32, order=2, seed=9)
    a, b = gen_target(spec).materialize(), gen_target(spec).materialize()
    assert a.table.keys() == b.table.keys()
    assert all(np.array_equal(a.table[k], b.table[k]) for k in a.table)


def test_three_concentration_schedule_histogram_pinned():
    # per-entry alphas 0.01 / 1 / 100 over V=2048 give entropy bands near
    # 3.5 nats and ln V, so three of the seven bins fill; pinned at seed 11
    spec = ModelPairSpec(vocab=2048, order=1, seed=11, concentrations=((0.01, 1 / 3), (1.0, 1 / 3), (100.0, 1 / 3)))
    m = gen_target(spec)
    hist = entropy_histogram(m, [[t] for t in range(2048)])
    assert hist.tolist() == [0, 0, 0, 697, 2, 0, 1349]


def test_default_schedule_hits_all_seven_bins_at_1024():
    m = gen_target(ModelPairSpec(vocab=1024, order=2, seed=42))
    gen = np.random.default_rng(0)
    hist = entropy_histogram(m, [gen.integers(0, 1024, 2).tolist() for _ in range(3000)])
    assert np.all(hist > 0)


def test_unreachable_entropy_bins_reported():
    with pytest.raises(ModelError, match="entropy bins"):
        gen_target(ModelPairSpec(vocab=16, order=1, min_entropy_bins=7))


def test_eps_zero_and_one():
    spec0 = ModelPairSpec(vocab=40, order=2, seed=1, draft_noise=0.0)
    t, d = gen_pair(spec0)
    spec1 = ModelPairSpec(vocab=40, order=2, seed=1, draft_noise=1.0)
    t1, d1 = gen_pair(spec1)
    from c2t.models import _PoolSource, _make_pool, _SALT_NOISE
    noise = _PoolSource(_make_pool(spec1, "model-gen/noise"), 1, _SALT_NOISE)
    for ctx in ([1, 2], [3], [], [39, 0]):
        k = t.context_key(ctx)
        assert np.array_equal(d.row(k), t.row(k))
        assert np.array_equal(d1.row(k), noise(k))


def test_total_variation_bounded_by_eps():
    spec = ModelPairSpec(vocab=100, order=2, seed=2, draft_noise=0.2)
    t, d = gen_pair(spec)
    gen = np.random.default_rng(4)
    for _ in range(200):
        k = t.context_key(gen.integers(0, 100, 2).tolist())
        tv = 0.5 * np.abs(t.row(k) - d.row(k)).sum()
        assert tv <= 0.2 + 1e-9
        assert abs(d.row(k).sum() - 1) < 1e-9


def test_lower_order_draft_marginalises():
    spec = ModelPairSpec(vocab=12, order=2, seed=3, draft_mode="lower-order")
    t, d = gen_pair(spec)
    row = d.next_dist([5, 7])
    expect = np.mean([t.row((x, 7)) for x in range(12)], axis=0)
    assert np.allclose(row, expect / expect.sum(), atol=1e-15)
    assert np.array_equal(d.next_dist([1, 7]), row)


def test_lower_order_needs_order2():
    spec = ModelPairSpec(vocab=12, order=1, draft_mode="lower-order")
    with pytest.raises(ModelError):
        derive_draft(gen_target(spec), spec)


def test_next_dist_contract(small_pair):
    _, t, _ = small_pair
    assert np.array_equal(t.next_dist([]), t.row((t.bos, t.bos)))
    assert np.array_equal(t.next_dist([9, 9, 1, 2]), t.next_dist([1, 2]))
    assert abs(next_dist(t, [3]).sum() - 1) < 1e-9
    with pytest.raises(ModelError):
        t.next_dist([65])


def test_greedy_continuation_oracle(small_pair):
    _, t, _ = small_pair
    assert greedy_continuation(t, [1], 0) == []
    ctx = [4, 5]
    out = greedy_continuation(t, ctx, 20)
    for tok in out:
        row = t.next_dist(ctx)
        assert tok == min(i for i in range(len(row)) if row[i] == row.max())
        ctx = ctx + [tok]


def test_one_hot_model_unique_chain():
    m = TabularLM(5, 1, {(t,): np.eye(5)[(t + 1) % 5] for t in range(6)})
    assert greedy_continuation(m, [0], 6) == [1, 2, 3, 4, 0, 1]


def test_invalid_specs():
    with pytest.raises(ModelError):
        ModelPairSpec(vocab=1)
    with pytest.raises(ModelError):
        ModelPairSpec(vocab=4, draft_noise=1.5)
    with pytest.raises(ModelError):
        ModelPairSpec(vocab=4, concentrations=((1.0, 0.5),))


@pytest.mark.parametrize("fmt", ["jsonl", "f64le"])
def test_model_file_roundtrip(tmp_path, fmt):
    m = random_table_model(6, 2, 0)
    save_model(m, tmp_path / "m", fmt)
    back = load_model(tmp_path / "m")
    for k in m.all_contexts():
        assert np.array_equal(back.row(k), m.row(k))


def test_generated_pair_roundtrip(tmp_path):
    spec = ModelPairSpec(vocab=300, order=3, seed=8)
    t, d = gen_pair(spec)
    save_pair(spec, t, d, tmp_path)
    assert len((tmp_path / "target.model").read_text().splitlines()) == 1
    t2, d2 = load_pair(tmp_path)
    for ctx in ([1, 2, 3], [299], []):
        assert np.array_equal(t2.next_dist(ctx), t.next_dist(ctx))
        assert np.array_equal(d2.next_dist(ctx), d.next_dist(ctx))


def test_bad_binary_body(tmp_path):
    m = random_table_model(4, 1, 0)
    save_model(m, tmp_path / "m", "f64le")
    raw = (tmp_path / "m").read_bytes()
    (tmp_path / "m").write_bytes(raw[:-8])
    with pytest.raises(ModelError, match="bytes"):
        load_model(tmp_path / "m")


def test_prompts_deterministic():
    assert make_prompts(100, 3, 5, 1) == make_prompts(100, 3, 5, 1)
    assert make_prompts(100, 3, 5, 1) != make_prompts(100, 3, 5, 2)
