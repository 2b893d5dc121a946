"""The bundled end-to-end pipeline and its checked-in outputs.

``build`` runs every stage for the manifest configuration and writes the
CSVs, the classifier checkpoint and a manifest with their sha256 digests.
``verify`` reruns from a manifest into a scratch directory and compares
digests. The labelled corpus is too large to ship (about 9M rows), so only
its digest is recorded.
"""
from __future__ import annotations

import hashlib
import json
import shutil
import time
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, bench, classifier, datagen, opcount
from .drafting import DraftConfig
from .models import ModelPairSpec, gen_pair, make_prompts, save_pair

BUNDLED_MANIFEST = {
    "pair": {"vocab": 1024, "order": 2, "seed": 42, "draft_noise": 0.08},
    "collect": {"prompts": 200, "prompt_len": 8, "prompt_seed": 1, "K": 10, "d_max": 11,
                "count": 8880, "top_m": 1000, "seed": 0},
    "train": {"hidden": 48, "lr": 1e-3, "epochs": 10, "batch": 1024, "eval_batch": 1011,
              "split": 0.95, "neg_ratio": 10.0, "threshold": 0.5, "seed": 0},
    "bench": {"prompts": 200, "prompt_len": 8, "prompt_seed": 2, "gen_len": 64, "K": 15,
              "d_max": 10, "beta": 0.5, "seed": 42},
    "sweep": {"betas": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "N_max": 2040,
              "criterion_betas": [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
              "tau_ratio": 0.98, "gamma_ratio": 0.90},
    "heatmap": {"gen_len": 64},
    "flops": {"V": 32000, "M": 1000, "K": 15, "reps": 10, "seed": 0},
    "entropy_gap": {"V": 32000, "M": 1000, "reps": 10, "seed": 0},
    "depth_tolerance": 0.02,
}

OUTPUT_FILES = ("pair/spec.json", "pair/target.model", "pair/draft.model", "classifier.json",
                "train_curve.csv", "bench_rounds.csv", "depth_curve.csv", "sweep.csv",
                "baseline_match.csv", "heatmap.csv", "flops.csv", "entropy_gap.csv", "surface.csv")


def golden_dir():
    return Path(str(resources.files("c2t") / "data" / "golden"))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def pair_spec(m):
    return ModelPairSpec(**m["pair"])


def bench_config(m):
    b = m["bench"]
    return DraftConfig(strategy="c2t", K=b["K"], d_max=b["d_max"], beta=b["beta"])


def write_match_csv(rows, path):
    cols = ["beta", "tau", "gamma", "N", "tau_e2", "gamma_e2", "tau_frac", "gamma_frac", "pass"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("NA" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
                              for c in cols) + "\n")


def build(out_dir, manifest=None, log=print):
    """Run the whole pipeline into ``out_dir``; returns the completed manifest."""
    m = json.loads(json.dumps(manifest or BUNDLED_MANIFEST))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    def step(msg):
        log(f"[{time.time() - t0:7.1f}s] {msg}")

    spec = pair_spec(m)
    target, draft = gen_pair(spec)
    save_pair(spec, target, draft, out / "pair", materialize=False)
    step("model pair")

    c = m["collect"]
    cprompts = make_prompts(spec.vocab, c["prompts"], c["prompt_len"], c["prompt_seed"])
    header, corpus = datagen.collect_labeled_trees(draft, target, cprompts, c["K"], c["d_max"], c["count"],
                                                   c["top_m"], c["seed"])
    step(f"collected {header['count']} trees, {len(corpus)} rows")
    m["corpus"] = {"rows": len(corpus), "positives": int(corpus.label.sum()),
                   "mean_tau": header["mean_tau"], "sha256": datagen.corpus_sha256(header, corpus)}
    data = corpus.to_set()
    del corpus
    tcfg = classifier.TrainConfig(**m["train"])
    params, curve = classifier.train(data, tcfg)
    del data
    classifier.save(params, out / "classifier.json")
    classifier.write_curve(curve, out / "train_curve.csv")
    step(f"trained classifier, val recall {curve[-1]['val_recall']}")

    b = m["bench"]
    bprompts = make_prompts(spec.vocab, b["prompts"], b["prompt_len"], b["prompt_seed"])
    cfg = bench_config(m)
    s = m["sweep"]
    rows = []
    main_report = None
    for beta in s["betas"]:
        rep = bench.run_benchmark(draft, target, replace(cfg, beta=beta), bprompts, b["gen_len"],
                                  classifier=params, seed=b["seed"])
        rows.append(bench.SweepRow("c2t", float(beta), rep.mean_tau, rep.total_gamma, rep.n_rounds))
        if beta == b["beta"]:
            main_report = rep
        step(f"c2t beta={beta}: tau {rep.mean_tau:.3f} gamma {rep.total_gamma}")
    if main_report is None:
        main_report = bench.run_benchmark(draft, target, cfg, bprompts, b["gen_len"], classifier=params,
                                          seed=b["seed"])
    bench.write_rounds_csv(main_report, out / "bench_rounds.csv")
    bench.write_depth_csv(main_report, out / "depth_curve.csv")
    e2 = bench.sweep(draft, target, "eagle2", range(1, s["N_max"] + 1), bprompts, b["gen_len"],
                     base=replace(cfg, strategy="eagle2"))
    rows += e2
    bench.write_sweep_csv(rows, out / "sweep.csv")
    step("eagle2 sweep")
    match = bench.match_baseline(rows, s["criterion_betas"], s["tau_ratio"], s["gamma_ratio"])
    write_match_csv(match, out / "baseline_match.csv")

    hm = bench.heatmap(draft, target, bprompts, m["heatmap"]["gen_len"])
    bench.write_heatmap_csv(hm, out / "heatmap.csv")
    f = m["flops"]
    opcount.write_flops_csv(opcount.flops_report(f["V"], f["M"], f["K"], f["seed"], f["reps"]), out / "flops.csv")
    g = m["entropy_gap"]
    opcount.write_gap_csv(opcount.entropy_gap(g["V"], g["M"], g["seed"], g["reps"]), out / "entropy_gap.csv")
    bench.write_surface_csv(bench.confidence_surface(params), out / "surface.csv")
    step("heatmap, op counts, surface")

    m["version"] = __version__
    m["files"] = {name: sha256_file(out / name) for name in OUTPUT_FILES}
    (out / "manifest.json").write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")
    return m


def verify(work_dir, golden=None, log=print):
    """Rebuild from the golden manifest and diff digests.

    Returns a list of (name, expected, actual) mismatches; empty means every
    output reproduced bitwise.
    """
    golden = Path(golden or golden_dir())
    want = json.loads((golden / "manifest.json").read_text())
    config = {k: v for k, v in want.items() if k not in ("files", "corpus", "version")}
    got = build(work_dir, config, log=log)
    bad = []
    for name, digest in want["files"].items():
        if got["files"].get(name) != digest:
            bad.append((name, digest, got["files"].get(name)))
        elif (golden / name).exists() and sha256_file(golden / name) != digest:
            bad.append((name, digest, "checked-in file altered"))
    if got["corpus"]["sha256"] != want["corpus"]["sha256"]:
        bad.append(("corpus", want["corpus"]["sha256"], got["corpus"]["sha256"]))
    return bad


def install(src_dir, golden=None):
    """Copy a finished build into the package's golden directory."""
    golden = Path(golden or golden_dir())
    golden.mkdir(parents=True, exist_ok=True)
    src = Path(src_dir)
    for name in OUTPUT_FILES + ("manifest.json",):
        (golden / name).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src / name, golden / name)
