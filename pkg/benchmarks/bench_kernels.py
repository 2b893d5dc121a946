"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--vocab 32000] [--repeat 200]

Each pair is checked for identical output before timing. The numba side is
warmed up once so compilation is not counted. A last section times one
full-tree expansion plus verification (K=10, d_max=11) under each backend,
each in its own interpreter because the backend is chosen at import.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from c2t import kernels


def timeit(fn, repeat):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def pairs(V, gen):
    p = gen.dirichlet(np.full(V, 0.1))
    X = gen.random((1011, 3))
    W1, b1, W2 = gen.normal(size=(48, 3)), gen.normal(size=48), gen.normal(size=48)
    a = 1 + 2 * int(gen.integers(0, V // 2))
    while np.gcd(a, V) != 1:
        a += 2
    return [
        ("topk K=15", lambda: kernels._topk_np(p, 15), lambda: kernels._topk_nb(p, 15)),
        ("sequential sum", lambda: np.cumsum(p)[-1], lambda: kernels._seqsum_nb(p)),
        ("mlp logits 1011x48", lambda: kernels._mlp_logits_np(X, W1, b1, W2, 0.1),
         lambda: kernels._mlp_logits_nb(X, W1, b1, W2, 0.1)),
        ("counted select K=15", lambda: kernels._counted_select_py(p, 15)[1],
         lambda: kernels._counted_select_nb(p.copy(), 15)[1]),
        ("affine relabel", lambda: kernels._relabel_np(p, a, 7), lambda: kernels._relabel_nb(p, a, 7)),
    ]


TREE_SCRIPT = """
import time
from c2t import kernels
from c2t.drafting import expand_full
from c2t.golden import golden_dir
from c2t.models import load_pair, make_prompts
from c2t.verification import accepted_path_arrays
target, draft = load_pair(golden_dir() / "pair")
prompts = make_prompts(target.vocab, 20, 8, 1)
expand_full(draft, prompts[0], 10, 11, top_m=1000)
t0 = time.perf_counter()
for ctx in prompts:
    exp = expand_full(draft, ctx, 10, 11, top_m=1000)
    accepted_path_arrays(exp, target, ctx)
print(kernels.backend(), (time.perf_counter() - t0) / len(prompts))
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=32000)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    gen = np.random.default_rng(args.seed)
    print(f"{'kernel':<22}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, slow, fast in pairs(args.vocab, gen):
        if not np.array_equal(np.asarray(slow()), np.asarray(fast())):
            sys.exit(f"{name}: backends disagree")
        t_np = timeit(slow, args.repeat)
        t_nb = timeit(fast, args.repeat)
        print(f"{name:<22}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")

    print("\nfull tree (K=10, d_max=11) expand + verify, per tree:")
    for flag in ("0", "1"):
        res = subprocess.run([sys.executable, "-c", TREE_SCRIPT], capture_output=True, text=True,
                             env=dict(os.environ, C2T_NUMBA=flag), check=True)
        backend, secs = res.stdout.split()
        print(f"  {backend:<8}{float(secs) * 1e3:10.2f} ms")


if __name__ == "__main__":
    main()
