import numpy as np
import pytest

from c2t import kernels, opcount


def by_scenario(rows, rep=0):
    return {r["scenario"]: r for r in rows if r["rep"] == rep}


def test_rows_cover_every_scenario():
    rows = opcount.flops_report(500, 50, 5, seed=1, reps=2)
    assert len(rows) == 2 * len(opcount.SCENARIOS)
    assert {r["scenario"] for r in rows} == set(opcount.SCENARIOS)


def test_entropy_flops_are_three_per_live_term():
    s = by_scenario(opcount.flops_report(400, 40, 4, seed=2))
    assert s["full_entropy"]["flops"] == 3 * 400
    assert s["full_entropy"]["comparisons"] == 400
    assert s["topm_entropy"]["flops"] == 3 * 40


def test_m_equal_v_gives_equal_entropy_terms():
    s = by_scenario(opcount.flops_report(300, 300, 5, seed=0))
    assert s["entropy_then_topk"]["flops"] == s["topm_entropy_then_topk"]["flops"] == 3 * 300


def test_selection_comparisons_match_kernel():
    gen = np.random.default_rng(0)
    v = gen.random(1000)
    c = opcount.OpCounter()
    c.select(v, 10)
    assert c.comparisons == kernels.counted_select(v, 10)[1]


def test_deterministic():
    assert opcount.flops_report(2000, 100, 7, seed=4, reps=2) == opcount.flops_report(2000, 100, 7, seed=4, reps=2)


def test_orderings_hold_at_mid_scale():
    tot = opcount.totals(opcount.flops_report(8000, 500, 15, seed=3, reps=3))
    for rep in range(3):
        assert tot[rep, "select_then_joint"] < tot[rep, "joint_then_select"]
        assert tot[rep, "topm_entropy_then_topk"] < tot[rep, "entropy_then_topk"]


@pytest.mark.parametrize("V,M,K", [(10, 20, 1), (10, 5, 6), (10, 5, 0)])
def test_argument_order_checked(V, M, K):
    with pytest.raises(ValueError):
        opcount.flops_report(V, M, K)


def test_flops_csv(tmp_path):
    rows = opcount.flops_report(100, 10, 2)
    opcount.write_flops_csv(rows, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "rep,scenario,V,M,K,comparisons,flops"
    assert len(lines) == 1 + len(rows)


def test_entropy_gap_rows():
    rows = opcount.entropy_gap(V=2000, M=200, seed=1, reps=3)
    for r in rows:
        assert 0 <= r["truncated_entropy"] <= r["full_entropy"]
        assert r["relative_gap"] == pytest.approx((r["full_entropy"] - r["truncated_entropy"]) / r["full_entropy"])
