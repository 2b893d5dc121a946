"""Experiment harness: generation-loop benchmarks, sweeps, heatmaps, surfaces."""
from __future__ import annotations

import bisect
import csv
import math
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .drafting import DraftConfig, build_tree, expand_full
from .models import ENTROPY_BIN_EDGES, greedy_continuation
from .verification import accepted_path_arrays, verify_greedy

HEATMAP_RANKS = 20
N_BINS = len(ENTROPY_BIN_EDGES) - 1
LOG_EPS = 1e-9


@dataclass
class BenchReport:
    strategy: str
    config: dict
    seed: int
    gen_len: int
    rounds: list = field(default_factory=list)  # {prompt_id, round, tau, gamma, depth}
    nodes_by_depth: list = field(default_factory=list)
    accepted_by_depth: list = field(default_factory=list)
    scored: int = 0  # classifier evaluations (c2t)
    kept: int = 0  # nodes kept after pruning (c2t)
    draft_calls: int = 0
    recall: float | None = None

    @property
    def n_rounds(self):
        return len(self.rounds)

    @property
    def mean_tau(self):
        return float(np.mean([r["tau"] for r in self.rounds])) if self.rounds else 0.0

    @property
    def total_gamma(self):
        return int(sum(r["gamma"] for r in self.rounds))

    @property
    def theta(self):
        return self.kept / self.scored if self.scored else None

    def per_prompt(self):
        out = {}
        for r in self.rounds:
            t = out.setdefault(r["prompt_id"], [0, 0, 0])
            t[0] += 1
            t[1] += r["tau"]
            t[2] += r["gamma"]
        return {pid: {"rounds": n, "tau": tau / n, "gamma": g} for pid, (n, tau, g) in sorted(out.items())}

    def summary(self):
        return {"strategy": self.strategy, "seed": self.seed, "gen_len": self.gen_len,
                "rounds": self.n_rounds, "mean_tau": self.mean_tau, "total_gamma": self.total_gamma,
                "theta": self.theta, "recall": self.recall, "draft_calls": self.draft_calls,
                "classifier_calls": self.scored}


def config_echo(config):
    d = asdict(config)
    d["shape"] = list(d["shape"])
    return d


# ---------------------------------------------------------------------------
# prompt-parallel map; results are merged in prompt order so output does not
# depend on the worker count

_JOB = {}


def _run_job(pid):
    return _JOB["fn"](pid)


def _map_prompts(fn, n, workers):
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    _JOB["fn"] = fn
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            return list(ex.map(_run_job, range(n)))
    finally:
        _JOB.clear()


def _bench_prompt(draft, target, config, classifier, prompt, gen_len):
    ctx = list(prompt)
    produced = 0
    rounds = []
    nodes, acc = [], []
    stats = {"scored": 0, "kept": 0, "draft_calls": 0}
    while produced < gen_len:
        tree = build_tree(draft, classifier, ctx, config, stats=stats)
        res = verify_greedy(tree, target, ctx)
        depths = tree.depths()
        dmax = int(depths.max()) if len(tree) else 0
        if len(nodes) < dmax + 1:
            nodes += [0] * (dmax + 1 - len(nodes))
            acc += [0] * (dmax + 1 - len(acc))
        for n in tree.nodes[1:]:
            nodes[depths[n.id]] += 1
            acc[depths[n.id]] += int(bool(n.accepted))
        rounds.append({"round": len(rounds), "tau": res.tau, "gamma": res.gamma, "depth": dmax})
        ctx.extend(tree.path_tokens(res.accepted_path[-1]))
        ctx.append(res.bonus_token)
        produced += res.tau + 1
    return rounds, nodes, acc, stats


def run_benchmark(draft, target, config, prompts, gen_len, classifier=None, seed=0, workers=1):
    """Autoregressive draft / verify loop over every prompt.

    Each round appends the accepted tokens and the bonus token; a prompt stops
    once at least ``gen_len`` tokens were produced.
    """
    if gen_len < 0:
        raise ValueError("gen_len must be >= 0")
    rep = BenchReport(config.strategy, config_echo(config), seed, gen_len)
    parts = _map_prompts(lambda i: _bench_prompt(draft, target, config, classifier, prompts[i], gen_len),
                         len(prompts), workers)
    nodes = np.zeros(0, dtype=np.int64)
    acc = np.zeros(0, dtype=np.int64)
    for pid, (rounds, n, a, st) in enumerate(parts):
        for r in rounds:
            rep.rounds.append({"prompt_id": pid, **r})
        if len(n) > nodes.size:
            nodes = np.pad(nodes, (0, len(n) - nodes.size))
            acc = np.pad(acc, (0, len(a) - acc.size))
        nodes[:len(n)] += np.asarray(n, dtype=np.int64)
        acc[:len(a)] += np.asarray(a, dtype=np.int64)
        rep.scored += st["scored"]
        rep.kept += st["kept"]
        rep.draft_calls += st["draft_calls"]
    rep.nodes_by_depth = nodes.tolist()
    rep.accepted_by_depth = acc.tolist()
    return rep


def depth_accept_curve(report):
    """Rate at depth l = rounds with tau >= l / rounds whose tree reaches depth l.

    Index 0 of the returned list is depth 1.
    """
    if not report.rounds:
        return []
    top = max(r["depth"] for r in report.rounds)
    out = []
    for level in range(1, top + 1):
        reach = [r for r in report.rounds if r["depth"] >= level]
        out.append(sum(1 for r in reach if r["tau"] >= level) / len(reach))
    return out


def depth_curve_rows(report):
    rows = []
    for level, rate in enumerate(depth_accept_curve(report), start=1):
        reach = sum(1 for r in report.rounds if r["depth"] >= level)
        hit = sum(1 for r in report.rounds if r["depth"] >= level and r["tau"] >= level)
        rows.append({"depth": level, "rounds_reaching": reach, "rounds_accepted": hit, "rate": rate})
    return rows


def write_rounds_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prompt_id", "round", "tau", "gamma"])
        for r in report.rounds:
            w.writerow([r["prompt_id"], r["round"], r["tau"], r["gamma"]])


def write_depth_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth", "rounds_reaching", "rounds_accepted", "rate"])
        for r in depth_curve_rows(report):
            w.writerow([r["depth"], r["rounds_reaching"], r["rounds_accepted"], repr(r["rate"])])


# ---------------------------------------------------------------------------
# sweeps

def _eagle2_prompt_rounds(draft, target, base, grid, prompt, gen_len):
    """Per grid N: list of (tau, gamma) rounds for one prompt.

    Greedy verification makes the produced text the target's greedy
    continuation whatever tree is drafted, so the full expansion at each
    position is built once and every N is scored from its rerank order.
    """
    K, d_max = base.K, base.d_max
    cont = greedy_continuation(target, list(prompt), gen_len + d_max + 1)
    memo = {}

    def at(pos):
        hit = memo.get(pos)
        if hit is None:
            ctx = list(prompt) + cont[:pos]
            exp = expand_full(draft, ctx, K, d_max)
            path, _ = accepted_path_arrays(exp, target, ctx)
            rank = np.empty(len(exp), dtype=np.int64)
            rank[exp.rank_order()] = np.arange(len(exp) - 1)
            # path ranks strictly increase, so tau(N) counts those below N
            hit = memo[pos] = (rank[path].tolist(), len(exp) - 1)
        return hit

    out = []
    for N in grid:
        rounds = []
        pos = 0
        while pos < gen_len:
            pr, size = at(pos)
            tau = bisect.bisect_left(pr, N)
            rounds.append((tau, min(N, size)))
            pos += tau + 1
        out.append(rounds)
    return out


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    param: float
    mean_tau: float
    total_gamma: int
    rounds: int


def sweep(draft, target, strategy, grid, prompts, gen_len, classifier=None, base=None, workers=1):
    """One row per grid point: beta values for c2t, N values for eagle2."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    base = base or DraftConfig(strategy=strategy)
    if base.strategy != strategy:
        base = replace(base, strategy=strategy)
    rows = []
    if strategy == "c2t":
        for beta in grid:
            rep = run_benchmark(draft, target, replace(base, beta=float(beta)), prompts, gen_len,
                                classifier=classifier, workers=workers)
            rows.append(SweepRow("c2t", float(beta), rep.mean_tau, rep.total_gamma, rep.n_rounds))
    elif strategy == "eagle2":
        grid = [int(n) for n in grid]
        if min(grid) < 1:
            raise ValueError("N must be >= 1")
        parts = _map_prompts(lambda i: _eagle2_prompt_rounds(draft, target, base, grid, prompts[i], gen_len),
                             len(prompts), workers)
        for j, N in enumerate(grid):
            rr = [r for p in parts for r in p[j]]
            taus = [t for t, _ in rr]
            rows.append(SweepRow("eagle2", N, float(np.mean(taus)) if taus else 0.0,
                                 int(sum(g for _, g in rr)), len(rr)))
    else:
        raise ValueError(f"sweeps cover c2t and eagle2, not {strategy!r}")
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "param", "mean_tau", "total_gamma"])
        for r in rows:
            param = r.param if r.strategy == "eagle2" else repr(r.param)
            w.writerow([r.strategy, param, repr(r.mean_tau), r.total_gamma])


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            p = int(r["param"]) if r["strategy"] == "eagle2" else float(r["param"])
            rows.append(SweepRow(r["strategy"], p, float(r["mean_tau"]), int(r["total_gamma"]), 0))
    return rows


def match_baseline(rows, betas=None, tau_ratio=0.98, gamma_ratio=0.90):
    """Pair each c2t point with the cheapest eagle2 point that reaches its tau.

    For every beta the baseline N is the smallest grid N whose mean tau is at
    least the c2t mean tau. A pair passes when c2t keeps ``tau_ratio`` of the
    baseline tau while spending at most ``gamma_ratio`` of its gamma. Points
    whose tau no grid N reaches get ``N = None`` and fail.
    """
    e2 = sorted((r for r in rows if r.strategy == "eagle2"), key=lambda r: r.param)
    out = []
    for r in rows:
        if r.strategy != "c2t" or (betas is not None and not any(abs(r.param - b) < 1e-12 for b in betas)):
            continue
        base = next((e for e in e2 if e.mean_tau >= r.mean_tau), None)
        row = {"beta": r.param, "tau": r.mean_tau, "gamma": r.total_gamma, "N": None,
               "tau_e2": None, "gamma_e2": None, "tau_frac": None, "gamma_frac": None, "pass": False}
        if base is not None:
            tf = r.mean_tau / base.mean_tau if base.mean_tau else math.inf
            gf = r.total_gamma / base.total_gamma if base.total_gamma else math.inf
            row.update(N=base.param, tau_e2=base.mean_tau, gamma_e2=base.total_gamma, tau_frac=tf,
                       gamma_frac=gf, **{"pass": tf >= tau_ratio and gf <= gamma_ratio})
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# entropy / rank heatmaps

@dataclass
class HeatmapSet:
    avg_prob: np.ndarray  # (7, 20), NaN where no samples
    accept_rate: np.ndarray
    bias: np.ndarray
    counts: np.ndarray  # samples per bin (same for every rank in a bin)

    def display(self):
        """Log-smoothed copies log(x + 1e-9); the raw matrices stay canonical."""
        return {"avg_prob": np.log(self.avg_prob + LOG_EPS),
                "accept_rate": np.log(self.accept_rate + LOG_EPS)}


def heatmap_from_samples(probs, hits, bins):
    """probs, hits: (n, 20) rank-ordered draft probabilities and match flags; bins: (n,)."""
    sums = np.zeros((N_BINS, HEATMAP_RANKS))
    acc = np.zeros((N_BINS, HEATMAP_RANKS))
    counts = np.zeros((N_BINS, HEATMAP_RANKS), dtype=np.int64)
    for b in range(N_BINS):
        m = bins == b
        counts[b] = int(m.sum())
        if counts[b, 0]:
            sums[b] = probs[m].sum(axis=0)
            acc[b] = hits[m].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        rate = np.where(counts > 0, acc / np.maximum(counts, 1), np.nan)
    return HeatmapSet(avg, rate, avg - rate, counts)


def heatmap(draft, target, prompts, gen_len, min_cell=30):
    """Draft distributions along the target's greedy continuation, binned by entropy.

    For every position the draft's top-20 tokens are ranked; rank r counts as
    accepted when it equals the target's argmax there.
    """
    probs, hits, bins = [], [], []
    R = min(HEATMAP_RANKS, draft.vocab)
    for prompt in prompts:
        ctx = list(prompt)
        for _ in range(gen_len):
            dist = draft.next_dist(ctx)
            tgt = int(np.argmax(target.next_dist(ctx)))
            idx = kernels.topk(dist, R)
            pr = np.zeros(HEATMAP_RANKS)
            hit = np.zeros(HEATMAP_RANKS)
            pr[:R] = dist[idx]
            hit[:R] = idx == tgt
            nz = dist[dist > 0]
            h = float(-(nz * np.log(nz)).sum())
            probs.append(pr)
            hits.append(hit)
            bins.append(min(int(h), N_BINS - 1))
            ctx.append(tgt)
    hm = heatmap_from_samples(np.array(probs).reshape(-1, HEATMAP_RANKS),
                              np.array(hits).reshape(-1, HEATMAP_RANKS), np.array(bins, dtype=np.int64))
    filled = float(np.mean(hm.counts >= min_cell))
    if filled < 0.5:
        warnings.warn(f"only {filled:.0%} of heatmap cells have >= {min_cell} samples", RuntimeWarning)
    return hm


def _bin_label(b):
    lo, hi = ENTROPY_BIN_EDGES[b], ENTROPY_BIN_EDGES[b + 1]
    return f"[{lo:g},{hi:g})" if math.isfinite(hi) else f">={lo:g}"


def write_heatmap_csv(hm, path):
    """Labelled blocks: avg_prob, accept_rate, bias, counts, then log displays. NA marks empty cells."""
    blocks = [("avg_prob", hm.avg_prob), ("accept_rate", hm.accept_rate), ("bias", hm.bias),
              ("counts", hm.counts)]
    disp = hm.display()
    blocks += [("display_log_avg_prob", disp["avg_prob"]), ("display_log_accept_rate", disp["accept_rate"])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for name, mat in blocks:
            w.writerow(["matrix", name])
            w.writerow(["entropy_bin"] + [f"rank{r}" for r in range(1, HEATMAP_RANKS + 1)])
            for b in range(N_BINS):
                cells = []
                for v in mat[b]:
                    if name == "counts":
                        cells.append(str(int(v)))
                    else:
                        cells.append("NA" if not np.isfinite(v) else repr(float(v)))
                w.writerow([_bin_label(b)] + cells)
            w.writerow([])


# ---------------------------------------------------------------------------
# confidence surface

def default_surface_grid():
    return (np.linspace(0.0, 1.0, 21), np.linspace(0.0, 10.0, 21), np.arange(11))


def confidence_surface(classifier, P_vals=None, H_vals=None, d_vals=None):
    """Dense (P, H, d) grid; rows {P, H, d, C, C_minmax}.

    C_minmax min-max normalises the pre-sigmoid logits over the grid (all 0
    when the surface is flat).
    """
    gP, gH, gd = default_surface_grid()
    P_vals = gP if P_vals is None else np.asarray(P_vals, dtype=np.float64)
    H_vals = gH if H_vals is None else np.asarray(H_vals, dtype=np.float64)
    d_vals = gd if d_vals is None else np.asarray(d_vals)
    if P_vals.min() < 0 or P_vals.max() > 1 or H_vals.min() < 0 or H_vals.max() > 10:
        raise ValueError("surface grid needs P in [0, 1] and H in [0, 10]")
    if np.any(d_vals < 0) or np.any(d_vals > 10) or np.any(d_vals != np.round(d_vals)):
        raise ValueError("surface grid needs integer d in [0, 10]")
    pp, hh, dd = np.meshgrid(P_vals, H_vals, d_vals.astype(np.float64), indexing="ij")
    X = np.column_stack((pp.ravel(), hh.ravel(), dd.ravel()))
    z = classifier.logits(X)
    C = kernels.sigmoid(z)
    span = z.max() - z.min()
    cm = (z - z.min()) / span if span > 0 else np.zeros_like(z)
    return [{"P": X[i, 0], "H": X[i, 1], "d": int(X[i, 2]), "C": C[i], "C_minmax": cm[i]} for i in range(X.shape[0])]


def write_surface_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P", "H", "d", "C", "C_minmax"])
        for r in rows:
            w.writerow([repr(float(r["P"])), repr(float(r["H"])), r["d"], repr(float(r["C"])),
                        repr(float(r["C_minmax"]))])
