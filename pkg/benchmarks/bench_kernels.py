"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Shapes mirror training: small rollout groups (G = 4..16 trajectories) and
BM25 postings over a few hundred pages.
"""
import argparse
import timeit

import numpy as np

from spoagent import kernels


def cases(rng):
    for g in (4, 16, 64):
        emb = rng.normal(size=(g, 128))
        r = rng.normal(size=g)
        yield f"cosine_similarity G={g}", lambda k, e=emb: k.cosine_similarity(e, True)
        yield f"spo_baseline      G={g}", lambda k, e=emb, r=r: k.spo_baseline(e, r, True)
    for n in (100, 1000):
        idx = np.sort(rng.choice(n, size=n // 3, replace=False)).astype(np.int64)
        tf = rng.integers(1, 5, size=idx.size).astype(np.float64)
        doc_len = rng.integers(50, 300, size=n).astype(np.float64)
        avg = float(doc_len.mean())

        def bm25(k, idx=idx, tf=tf, doc_len=doc_len, n=n, avg=avg):
            k.bm25_accumulate(np.zeros(n), idx, tf, doc_len, 1.3, 1.2, 0.75, avg)

        yield f"bm25_accumulate   N={n}", bm25


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    backs = kernels.backends()
    if "cython" not in backs:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    names = sorted(backs)
    print(f"{'kernel':28s}" + "".join(f"{n + ' (us)':>14s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng):
        us = {}
        for n in names:
            mod = backs[n]
            best = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=5))
            us[n] = 1e6 * best / args.repeat
        line = f"{label:28s}" + "".join(f"{us[n]:14.2f}" for n in names)
        if len(names) > 1:
            line += f"{us['numpy'] / us['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
