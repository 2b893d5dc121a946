"""Command-line entry point: ``c2t <subcommand> [flags]``.

Every flag can also come from a flat config file (``--config FILE``): one
``key = value`` per line, ``#`` starts a comment, keys are flag names with
dashes or underscores. Flags given on the command line win over the file.

Relative ``--out`` paths resolve against ``$C2T_OUT`` when it is set. Each
run writes a manifest in the same key = value format (resolved options,
tool version, sha256 of the outputs); passing it back through ``--config``
reproduces the run.

Exit codes: 0 ok, 1 usage, 2 data error, 3 golden mismatch.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GOLDEN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    """'10,20,60' or '1-2040' (inclusive) or a mix."""
    out = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers or ranges, got {text!r}") from None
    return out


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _prompt_flags(p, n=200, seed=2):
    p.add_argument("--pair", help="model pair directory (default: the bundled pair)")
    p.add_argument("--prompts", type=int, default=n)
    p.add_argument("--prompt-len", type=int, default=8)
    p.add_argument("--prompt-seed", type=int, default=seed)


def build_parser():
    ap = _Parser(prog="c2t", description="Classifier-pruned token trees on synthetic model pairs.")
    ap.add_argument("--version", action="version", version=f"c2t {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value file; flags override it")
        return p

    p = add("gen-model", "generate a target/draft pair")
    p.add_argument("--vocab", type=int, default=1024)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--draft-noise", type=float, default=0.08)
    p.add_argument("--draft-mode", default="mixture-perturb", choices=["mixture-perturb", "lower-order"])
    p.add_argument("--format", default="jsonl", choices=["jsonl", "f64le"])
    p.add_argument("--materialize", default="auto", choices=["auto", "yes", "no"])
    p.add_argument("--out", default="pair")

    p = add("collect", "harvest a labelled full-tree corpus")
    _prompt_flags(p, seed=1)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--dmax", type=int, default=11)
    p.add_argument("--count", type=int, default=8880)
    p.add_argument("--top-m", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="corpus.jsonl")

    def train_flags(p, lr, epochs):
        p.add_argument("--data", required=True)
        p.add_argument("--lr", type=float, default=lr)
        p.add_argument("--epochs", type=int, default=epochs)
        p.add_argument("--batch", type=int, default=1024)
        p.add_argument("--eval-batch", type=int, default=1011)
        p.add_argument("--split", type=float, default=0.95)
        p.add_argument("--neg-ratio", type=float, default=10.0)
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="classifier.json")

    p = add("train", "train the confidence classifier")
    train_flags(p, 1e-3, 10)
    p.add_argument("--hidden", type=int, default=48)

    p = add("finetune", "fine-tune a checkpoint on a corpus subsample")
    train_flags(p, 1e-4, 10)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fraction", type=float, default=0.10)

    p = add("eval", "run the draft/verify benchmark for one strategy")
    _prompt_flags(p)
    p.add_argument("--strategy", default="c2t", choices=["c2t", "eagle2", "static", "chain"])
    p.add_argument("--preset", choices=["dymax", "dyjoint", "c2t-chain"])
    p.add_argument("--classifier", help="checkpoint (default: the bundled one)")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--topk", type=int, default=15)
    p.add_argument("--dmax", type=int, default=10)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--second-topk", type=_bool, default=True)
    p.add_argument("--chain-stop", default="none", choices=["none", "max_prob", "joint_prob", "classifier"])
    p.add_argument("--chain-threshold", type=float, default=None)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--shape", type=_ints, default=None, help="static tree nodes per layer, e.g. 4,8,7,4,2,1")
    p.add_argument("--top-m", type=int, default=1000)
    p.add_argument("--gen-len", type=int, default=64)
    p.add_argument("--data", help="corpus to report classifier recall / positive rate on")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="eval")

    p = add("sweep", "tau/gamma scatter over beta (c2t) and N (eagle2)")
    _prompt_flags(p)
    p.add_argument("--strategies", default="c2t,eagle2")
    p.add_argument("--classifier")
    p.add_argument("--betas", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    p.add_argument("--Ns", type=_ints, default=list(range(1, 2041)))
    p.add_argument("--topk", type=int, default=15)
    p.add_argument("--dmax", type=int, default=10)
    p.add_argument("--gen-len", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="sweep")

    p = add("heatmap", "per-entropy-bin, per-rank probability vs accept rate")
    _prompt_flags(p)
    p.add_argument("--gen-len", type=int, default=64)
    p.add_argument("--out", default="heatmap")

    p = add("flops", "instrumented op counts for the entropy/selection scenarios")
    p.add_argument("--V", type=int, default=32000)
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--K", type=int, default=15)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="flops")

    p = add("surface", "classifier confidence over a dense (P, H, d) grid")
    p.add_argument("--classifier")
    p.add_argument("--P-steps", type=int, default=21)
    p.add_argument("--H-steps", type=int, default=21)
    p.add_argument("--out", default="surface")

    p = add("verify-golden", "rebuild the bundled outputs and compare digests")
    p.add_argument("--golden", help="golden directory (default: the bundled one)")
    p.add_argument("--work", help="scratch directory for the rebuild (default: a temp dir)")
    return ap


# ---------------------------------------------------------------------------
# config files

def read_config(path):
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _subparser(ap, name):
    for a in ap._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices.get(name)
    return None


def _apply_config(sp, values, command):
    acts = {a.dest: a for a in sp._actions}
    defaults = {}
    for k, v in values.items():
        if k == "command":
            if v != command:
                raise UsageError(f"config is for {v!r}, not {command!r}")
            continue
        if k in ("version", "config"):
            continue
        a = acts.get(k)
        if a is None:
            raise UsageError(f"unknown config key {k!r} for {command}")
        if v in ("", "None"):
            val = None
        elif a.type is not None:
            try:
                val = a.type(v)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {k}: {exc}") from None
        else:
            val = v
        if a.choices is not None and val is not None and val not in a.choices:
            raise UsageError(f"config key {k}: {val!r} not in {sorted(a.choices)}")
        defaults[k] = val
        a.required = False
    sp.set_defaults(**defaults)


def parse(argv):
    ap = build_parser()
    cfg = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif a.startswith("--config="):
            cfg = a.split("=", 1)[1]
    if cfg and argv and not argv[0].startswith("-"):
        sp = _subparser(ap, argv[0])
        if sp is not None:
            _apply_config(sp, read_config(cfg), argv[0])
    return ap.parse_args(argv)


def _fmt_value(v):
    if isinstance(v, list):
        if v and all(isinstance(x, int) for x in v):
            # collapse runs of consecutive integers into lo-hi
            parts, lo = [], 0
            for i in range(1, len(v) + 1):
                if i == len(v) or v[i] != v[i - 1] + 1:
                    parts.append(str(v[lo]) if i - 1 == lo else f"{v[lo]}-{v[i - 1]}")
                    lo = i
            return ",".join(parts)
        return ",".join(str(x) for x in v)
    return str(v)


def _manifest_text(args, outputs):
    lines = [f"# c2t {__version__} run manifest", f"command = {args.command}", f"version = {__version__}"]
    for k, v in sorted(vars(args).items()):
        if k in ("command", "config"):
            continue
        lines.append(f"{k} = {_fmt_value(v)}")
    if outputs:
        from .golden import sha256_file
        for p in outputs:
            lines.append(f"# sha256 {sha256_file(p)} {Path(p).name}")
    return "\n".join(lines) + "\n"


def write_manifest(args, path, outputs=()):
    Path(path).write_text(_manifest_text(args, outputs))


# ---------------------------------------------------------------------------
# helpers

def out_path(p):
    p = Path(p)
    base = os.environ.get("C2T_OUT")
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _load_pair(args):
    from .golden import golden_dir
    from .models import ModelError, load_pair

    d = Path(args.pair) if args.pair else golden_dir() / "pair"
    if not (d / "target.model").exists() or not (d / "draft.model").exists():
        raise DataError(f"no model pair in {d}")
    try:
        return load_pair(d)
    except (ModelError, ValueError, KeyError) as exc:
        raise DataError(f"bad model pair in {d}: {exc}") from None


def _load_classifier(path):
    from . import classifier
    from .golden import golden_dir

    p = Path(path) if path else golden_dir() / "classifier.json"
    try:
        return classifier.load(p)
    except classifier.CheckpointError as exc:
        raise DataError(str(exc)) from None


def _prompts(args, vocab):
    from .models import make_prompts

    if args.prompts < 1 or args.prompt_len < 0:
        raise UsageError("--prompts must be >= 1 and --prompt-len >= 0")
    return make_prompts(vocab, args.prompts, args.prompt_len, args.prompt_seed)


def _read_corpus(path):
    from .datagen import read_corpus

    try:
        return read_corpus(path)
    except FileNotFoundError:
        raise DataError(f"corpus not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad corpus {path}: {exc}") from None


def _train_config(args, **extra):
    from .classifier import TrainConfig

    try:
        return TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, eval_batch=args.eval_batch,
                           split=args.split, neg_ratio=args.neg_ratio, threshold=args.threshold,
                           seed=args.seed, **extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_model(args):
    from .models import ModelError, ModelPairSpec, gen_pair, save_pair

    try:
        spec = ModelPairSpec(vocab=args.vocab, order=args.order, seed=args.seed, draft_noise=args.draft_noise,
                             draft_mode=args.draft_mode)
        target, draft = gen_pair(spec)
    except ModelError as exc:
        raise UsageError(str(exc)) from None
    out = out_path(args.out)
    mat = {"auto": None, "yes": True, "no": False}[args.materialize]
    save_pair(spec, target, draft, out, fmt=args.format, materialize=mat)
    files = [out / "target.model", out / "draft.model", out / "spec.json"]
    write_manifest(args, out / "manifest.cfg", files)
    print(json.dumps(spec.to_dict(), sort_keys=True))


def cmd_collect(args):
    from .datagen import collect_labeled_trees, write_corpus

    target, draft = _load_pair(args)
    prompts = _prompts(args, target.vocab)
    try:
        header, corpus = collect_labeled_trees(draft, target, prompts, args.topk, args.dmax, args.count,
                                               args.top_m, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(out, header, corpus)
    write_manifest(args, str(out) + ".manifest", [out])
    print(f"{header['count']} trees, {len(corpus)} rows, mean tau {header['mean_tau']:.4f} -> {out}")


def _finish_training(args, params, curve, out):
    from . import classifier

    out.parent.mkdir(parents=True, exist_ok=True)
    classifier.save(params, out)
    curve_path = out.with_name(out.stem + "_curve.csv")
    classifier.write_curve(curve, curve_path)
    write_manifest(args, str(out) + ".manifest", [out, curve_path])
    last = curve[-1] if curve else {}
    print(f"checkpoint {out}; val recall {last.get('val_recall')} theta {last.get('val_theta')}")


def cmd_train(args):
    from . import classifier

    _, data = _read_corpus(args.data)
    cfg = _train_config(args, hidden=args.hidden)
    try:
        params, curve = classifier.train(data, cfg)
    except (classifier.TrainingError, ValueError) as exc:
        raise DataError(str(exc)) from None
    _finish_training(args, params, curve, out_path(args.out))


def cmd_finetune(args):
    from . import classifier

    params = _load_classifier(args.checkpoint)
    _, data = _read_corpus(args.data)
    cfg = _train_config(args, hidden=params.hidden, fraction=args.fraction)
    try:
        out, curve = classifier.fine_tune(params, data, cfg, return_curve=True)
    except (classifier.TrainingError, ValueError) as exc:
        raise DataError(str(exc)) from None
    _finish_training(args, out, curve, out_path(args.out))


def _draft_config(args):
    from .drafting import CHAIN_PRESETS, DraftConfig, EAGLE1_SIZED_SHAPE

    try:
        if args.preset:
            cfg = replace(CHAIN_PRESETS[args.preset], top_m=args.top_m)
        else:
            cfg = DraftConfig(strategy=args.strategy, K=args.topk, d_max=args.dmax, beta=args.beta, N=args.N,
                              second_topk=args.second_topk, chain_stop=args.chain_stop,
                              chain_threshold=args.chain_threshold, max_len=args.max_len, top_m=args.top_m,
                              shape=tuple(args.shape) if args.shape else EAGLE1_SIZED_SHAPE)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_eval(args):
    from . import bench, classifier

    cfg = _draft_config(args)
    target, draft = _load_pair(args)
    needs_cls = cfg.strategy == "c2t" or (cfg.strategy == "chain" and cfg.chain_stop == "classifier")
    cls = _load_classifier(args.classifier) if needs_cls else None
    prompts = _prompts(args, target.vocab)
    try:
        rep = bench.run_benchmark(draft, target, cfg, prompts, args.gen_len, classifier=cls, seed=args.seed,
                                  workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.data and cls is not None:
        _, data = _read_corpus(args.data)
        st = classifier.evaluate(cls, data, 0.5, 1011)
        rep.recall = st.recall
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_rounds_csv(rep, out / "report.csv")
    bench.write_depth_csv(rep, out / "depth_curve.csv")
    summary = rep.summary()
    summary["config"] = rep.config
    summary["accept_rate_by_depth"] = bench.depth_accept_curve(rep)
    summary["per_prompt"] = rep.per_prompt()
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    write_manifest(args, out / "manifest.cfg", [out / "report.csv", out / "depth_curve.csv", out / "summary.json"])
    print(f"{rep.strategy}: rounds {rep.n_rounds} mean tau {rep.mean_tau:.4f} total gamma {rep.total_gamma}")


def cmd_sweep(args):
    from . import bench
    from .drafting import DraftConfig
    from .golden import write_match_csv

    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in ("c2t", "eagle2")]
    if bad or not strategies:
        raise UsageError(f"--strategies takes c2t and/or eagle2, got {args.strategies!r}")
    target, draft = _load_pair(args)
    prompts = _prompts(args, target.vocab)
    rows = []
    try:
        base = DraftConfig(K=args.topk, d_max=args.dmax)
        if "c2t" in strategies:
            cls = _load_classifier(args.classifier)
            rows += bench.sweep(draft, target, "c2t", args.betas, prompts, args.gen_len, classifier=cls,
                                base=base, workers=args.workers)
        if "eagle2" in strategies:
            rows += bench.sweep(draft, target, "eagle2", args.Ns, prompts, args.gen_len, base=base,
                                workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_sweep_csv(rows, out / "sweep.csv")
    files = [out / "sweep.csv"]
    if len(strategies) == 2:
        write_match_csv(bench.match_baseline(rows), out / "baseline_match.csv")
        files.append(out / "baseline_match.csv")
    write_manifest(args, out / "manifest.cfg", files)
    print(f"{len(rows)} sweep rows -> {out / 'sweep.csv'}")


def cmd_heatmap(args):
    from . import bench

    target, draft = _load_pair(args)
    hm = bench.heatmap(draft, target, _prompts(args, target.vocab), args.gen_len)
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_heatmap_csv(hm, out / "heatmap.csv")
    write_manifest(args, out / "manifest.cfg", [out / "heatmap.csv"])
    print(f"heatmap -> {out / 'heatmap.csv'}")


def cmd_flops(args):
    from . import opcount

    try:
        rows = opcount.flops_report(args.V, args.M, args.K, args.seed, args.reps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opcount.write_flops_csv(rows, out / "flops.csv")
    opcount.write_gap_csv(opcount.entropy_gap(args.V, args.M, args.seed, args.reps), out / "entropy_gap.csv")
    write_manifest(args, out / "manifest.cfg", [out / "flops.csv", out / "entropy_gap.csv"])
    print(f"op counts -> {out / 'flops.csv'}")


def cmd_surface(args):
    from . import bench

    if args.P_steps < 1 or args.H_steps < 1:
        raise UsageError("grid steps must be >= 1")
    cls = _load_classifier(args.classifier)
    P = np.linspace(0.0, 1.0, args.P_steps) if args.P_steps > 1 else np.array([0.0])
    H = np.linspace(0.0, 10.0, args.H_steps) if args.H_steps > 1 else np.array([0.0])
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_surface_csv(bench.confidence_surface(cls, P, H, np.arange(11)), out / "surface.csv")
    write_manifest(args, out / "manifest.cfg", [out / "surface.csv"])
    print(f"surface -> {out / 'surface.csv'}")


def cmd_verify_golden(args):
    from . import golden

    gdir = Path(args.golden) if args.golden else golden.golden_dir()
    if not (gdir / "manifest.json").exists():
        raise DataError(f"no golden manifest in {gdir}")
    log = lambda msg: print(msg, file=sys.stderr)
    if args.work:
        bad = golden.verify(out_path(args.work), gdir, log=log)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            bad = golden.verify(tmp, gdir, log=log)
    for name, want, got in bad:
        print(f"MISMATCH {name} expected={want} got={got}")
    if bad:
        return EXIT_GOLDEN
    print("golden outputs reproduced")
    return EXIT_OK


COMMANDS = {"gen-model": cmd_gen_model, "collect": cmd_collect, "train": cmd_train, "finetune": cmd_finetune,
            "eval": cmd_eval, "sweep": cmd_sweep, "heatmap": cmd_heatmap, "flops": cmd_flops,
            "surface": cmd_surface, "verify-golden": cmd_verify_golden}


def _fail(kind, msg, code):
    print(f"error: kind={kind} msg={json.dumps(str(msg))}", file=sys.stderr)
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        rc = COMMANDS[args.command](args)
        return EXIT_OK if rc is None else rc
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("data", f"{exc.strerror}: {exc.filename}", EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
