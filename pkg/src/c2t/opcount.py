"""Instrumented operation counts for the entropy / selection cost scenarios.

Comparisons come from the counting quickselect kernel. Floating-point work
is tallied by the wrappers below, one unit per log, multiply or add that is
actually executed. Counts are measured on seeded Dirichlet(1) inputs, so
they depend on the data only through the quickselect partition path.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import rng as _rng

SCENARIOS = (
    "full_entropy",            # entropy over all V
    "topm_entropy",            # top-M selection, then entropy over M
    "entropy_then_topk",       # full entropy, then top-K over V
    "topm_entropy_then_topk",  # top-M, entropy over M, then top-K over M
    "joint_then_select",       # K*V joint products, then top-K over K*V
    "select_then_joint",       # top-K per parent, K*K products, top-K over K*K
)


@dataclass
class OpCounter:
    comparisons: int = 0
    flops: int = 0

    def select(self, values, k):
        out, c = kernels.counted_select(values, k)
        self.comparisons += c
        return out[:k]

    def entropy(self, p):
        # a p > 0 test per term, then log, multiply, accumulate per live term
        self.comparisons += p.size
        live = p[p > 0]
        self.flops += 3 * live.size
        return float(-kernels.seqsum(live * np.log(live)))

    def mul(self, a, b):
        out = a * b
        self.flops += out.size
        return out


def _scenario(name, p_rows, parent_P, M, K):
    c = OpCounter()
    p = p_rows[0]
    if name == "full_entropy":
        c.entropy(p)
    elif name == "topm_entropy":
        c.entropy(c.select(p, M))
    elif name == "entropy_then_topk":
        c.entropy(p)
        c.select(p, K)
    elif name == "topm_entropy_then_topk":
        top = c.select(p, M)
        c.entropy(top)
        c.select(top, K)
    elif name == "joint_then_select":
        joint = np.concatenate([c.mul(parent_P[i], row) for i, row in enumerate(p_rows)])
        c.select(joint, K)
    elif name == "select_then_joint":
        joint = np.concatenate([c.mul(parent_P[i], c.select(row, K)) for i, row in enumerate(p_rows)])
        c.select(joint, K)
    else:
        raise ValueError(f"unknown scenario {name!r}")
    return c


def flops_report(V, M, K, seed=0, reps=1):
    """One row per (repetition, scenario): {rep, scenario, V, M, K, comparisons, flops}.

    Each repetition draws K Dirichlet(1) rows over V and K parent joint
    probabilities; single-distribution scenarios use the first row.
    """
    if not (V >= M >= K >= 1):
        raise ValueError(f"need V >= M >= K >= 1, got V={V}, M={M}, K={K}")
    rows = []
    for rep in range(reps):
        gen = _rng.stream(seed, "flops", rep)
        p_rows = gen.dirichlet(np.ones(V), size=K)
        parent_P = np.sort(gen.random(K))[::-1]
        for name in SCENARIOS:
            c = _scenario(name, p_rows, parent_P, M, K)
            rows.append({"rep": rep, "scenario": name, "V": V, "M": M, "K": K,
                         "comparisons": c.comparisons, "flops": c.flops})
    return rows


def totals(rows):
    """{(rep, scenario): comparisons + flops}."""
    return {(r["rep"], r["scenario"]): r["comparisons"] + r["flops"] for r in rows}


def write_flops_csv(rows, path):
    cols = ["rep", "scenario", "V", "M", "K", "comparisons", "flops"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])


def entropy_gap(V=32000, M=1000, seed=0, reps=10):
    """Full vs top-M truncated entropy on Dirichlet(1) rows over V."""
    from .features import full_entropy, truncated_entropy

    out = []
    for rep in range(reps):
        gen = _rng.stream(seed, "entropy-gap", rep)
        p = gen.dirichlet(np.ones(V))
        full = full_entropy(p)
        trunc = truncated_entropy(p, M)
        out.append({"rep": rep, "V": V, "M": M, "full_entropy": full, "truncated_entropy": trunc,
                    "relative_gap": (full - trunc) / full})
    return out


def write_gap_csv(rows, path):
    cols = ["rep", "V", "M", "full_entropy", "truncated_entropy", "relative_gap"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
