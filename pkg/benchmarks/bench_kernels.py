#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run after `pip install -e .`:

    python benchmarks/bench_kernels.py [--repeat 20]

The first numba call of each kernel compiles (cached afterwards); compile
time is excluded by a warmup call.
"""

import argparse
import time

import numpy as np

import docmt.kernels as K


def timed(fn, args, repeat):
    fn(*args)  # warmup / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_softmax(rng, repeat):
    scores = rng.normal(size=(8 * 4 * 128, 128)).astype(np.float32)
    limits = rng.integers(1, 129, size=scores.shape[0]).astype(np.int64)
    return [
        ("softmax_rows (4096x128 f32)",
         timed(K._np_softmax_rows, (scores, limits), repeat),
         timed(K._nb_softmax_rows, (scores, limits), repeat)),
        ("softmax_backward",
         timed(K._np_softmax_rows_backward,
               (K._np_softmax_rows(scores, limits), scores, limits), repeat),
         timed(K._nb_softmax_rows_backward,
               (K._nb_softmax_rows(scores, limits), scores, limits), repeat)),
    ]


def bench_layernorm(rng, repeat):
    x = rng.normal(size=(4096, 256)).astype(np.float32)
    g = rng.normal(size=256).astype(np.float32)
    b = rng.normal(size=256).astype(np.float32)
    dy = rng.normal(size=x.shape).astype(np.float32)
    _, mean, rstd = K._np_layernorm_forward(x, g, b, 1e-5)
    return [
        ("layernorm_forward (4096x256 f32)",
         timed(K._np_layernorm_forward, (x, g, b, 1e-5), repeat),
         timed(K._nb_layernorm_forward, (x, g, b, 1e-5), repeat)),
        ("layernorm_backward",
         timed(K._np_layernorm_backward, (x, g, mean, rstd, dy), repeat),
         timed(K._nb_layernorm_backward, (x, g, mean, rstd, dy), repeat)),
    ]


def bench_embedding_grad(rng, repeat):
    ids = rng.integers(0, 4000, size=8192).astype(np.int64)
    dout = rng.normal(size=(8192, 256)).astype(np.float32)

    def np_run():
        K._np_embedding_grad(ids, dout, np.zeros((4000, 256), np.float32))

    def nb_run():
        K._nb_embedding_grad(ids, dout, np.zeros((4000, 256), np.float32))

    return [("embedding_grad (8192x256)",
             timed(lambda: np_run(), (), repeat),
             timed(lambda: nb_run(), (), repeat))]


def bench_bpe(rng, repeat):
    lengths = rng.integers(2, 12, size=20000)
    syms = rng.integers(9, 120, size=int(lengths.sum())).astype(np.int32)
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    freqs = rng.integers(1, 50, size=len(lengths)).astype(np.int64)
    rows = [
        ("bpe count_pairs (20k words)",
         timed(K._np_count_pairs, (syms, offsets, freqs), repeat),
         timed(K._nb_count_pairs, (syms, offsets, freqs), repeat)),
        ("bpe apply_merge",
         timed(K._np_apply_merge, (syms, offsets, np.int32(9), np.int32(10),
                                   np.int32(500)), repeat),
         timed(K._nb_apply_merge, (syms, offsets, np.int32(9), np.int32(10),
                                   np.int32(500)), repeat)),
    ]
    keys = np.array(sorted(int(K.pack_pair(a, b))
                           for a, b in zip(range(9, 59), range(10, 60))),
                    dtype=np.int64)
    ranks = np.arange(50, dtype=np.int64)
    new_ids = np.arange(200, 250, dtype=np.int32)
    word = rng.integers(9, 60, size=30).astype(np.int32)

    def np_words():
        for _ in range(200):
            K._np_encode_word(word, keys, ranks, new_ids)

    def nb_words():
        for _ in range(200):
            K._nb_encode_word(word, keys, ranks, new_ids)

    rows.append(("bpe encode_word (200 calls)",
                 timed(lambda: np_words(), (), repeat),
                 timed(lambda: nb_words(), (), repeat)))
    return rows


def bench_align(rng, repeat):
    la = rng.integers(5, 60, size=200).astype(np.float64)
    lb = rng.integers(5, 60, size=210).astype(np.float64)
    return [("align_dp (200x210)",
             timed(K._np_align_dp, (la, lb, 1.0), repeat),
             timed(K._nb_align_dp_wrap, (la, lb, 1.0), repeat))]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=10)
    args = parser.parse_args()
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    rows += bench_softmax(rng, args.repeat)
    rows += bench_layernorm(rng, args.repeat)
    rows += bench_embedding_grad(rng, args.repeat)
    rows += bench_bpe(rng, args.repeat)
    rows += bench_align(rng, args.repeat)

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
