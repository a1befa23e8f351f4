#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-Python twin.

Runs each workload on both backends, checks the outputs are bitwise
identical (the whole point of the twin design), and prints a timing table.

Usage:
    python3 benchmarks/bench_backends.py [--repeats N] [--scale S]

--scale multiplies the workload sizes (1 = defaults, keep it small: the
pure-Python backend is the slow one being measured).
"""

from __future__ import annotations

import argparse
import random
import time

import aim.numerics as nm
from aim.merge import MergeConfig
from aim.numerics import Matrix, available_backends, multihead_causal_attention
from aim.prune import AttentionSnapshot, importance_scores
from aim.schedule import PruneSchedule
from aim.simengine import ToyModel, run_prefill
from aim.tokens import TokenMatrix, synthesize_tokens


def _rand_matrix(rng: random.Random, rows: int, cols: int) -> Matrix:
    return Matrix.from_rows(
        [[rng.uniform(-1.0, 1.0) for _ in range(cols)] for _ in range(rows)])


def _causal_mask(n: int) -> list:
    return [[1 if j <= i else 0 for j in range(n)] for i in range(n)]


def make_workloads(scale: float, seed: int):
    rng = random.Random(seed)
    s = lambda v: max(2, int(round(v * scale)))  # noqa: E731

    mm_n = s(96)
    a = _rand_matrix(rng, mm_n, mm_n)
    b = _rand_matrix(rng, mm_n, mm_n)

    sm_n = s(192)
    logits = _rand_matrix(rng, sm_n, sm_n)
    mask = _causal_mask(sm_n)

    pc_n, pc_d = s(160), s(48)
    toks = _rand_matrix(rng, pc_n, pc_d)

    at_n, at_d = s(128), 32
    heads = 4
    q = _rand_matrix(rng, at_n, at_d)
    k = _rand_matrix(rng, at_n, at_d)
    v = _rand_matrix(rng, at_n, at_d)

    pr_n = s(192)
    weights = [[0.0] * pr_n for _ in range(pr_n)]
    for i in range(pr_n):
        row = [rng.random() + 1e-3 for _ in range(i + 1)]
        total = sum(row)
        for j, w in enumerate(row):
            weights[i][j] = w / total
    snap_m = Matrix.from_rows(weights)

    sim_dim, sim_layers, sim_frames, sim_per = 32, 4, 3, s(40)
    visual = synthesize_tokens(seed, frames=sim_frames,
                               tokens_per_frame=sim_per, dim=sim_dim,
                               redundancy=0.5)
    text_raw = synthesize_tokens(seed + 1, frames=1, tokens_per_frame=8,
                                 dim=sim_dim, redundancy=0.0)
    text = TokenMatrix(text_raw.embeddings, text_raw.frame_spans,
                       tuple(i + visual.count for i in text_raw.source_ids))
    model = ToyModel.build(seed + 2, layers=sim_layers, dim=sim_dim,
                           heads=4, mlp_dim=2 * sim_dim)

    def bench_matmul():
        return nm.matmul(a, b).buf.tobytes()

    def bench_softmax():
        return nm.masked_softmax_rows(logits, mask).buf.tobytes()

    def bench_pairwise_cosine():
        sims, bad = nm.pairwise_cosine_matrix(toks, toks)
        assert bad == -1
        return sims.buf.tobytes()

    def bench_attention():
        ctx, attn = multihead_causal_attention(q, k, v, heads)
        return ctx.buf.tobytes() + attn.buf.tobytes()

    def bench_importance():
        scores = importance_scores(AttentionSnapshot(snap_m),
                                   direction="received", iterations=3)
        return repr(scores.values).encode()

    def bench_prefill():
        merged_targets = sum(
            max(1, int((e - s_) * 0.25 + 0.5)) for s_, e in visual.frame_spans)
        sched = PruneSchedule(l1=2, l2=sim_layers, total_layers=sim_layers,
                              base_visual_count=merged_targets)
        res = run_prefill(visual, text, model,
                          merge_config=MergeConfig(0.25), schedule=sched)
        return res.final_hidden.buf.tobytes()

    return [
        (f"matmul {mm_n}x{mm_n} @ {mm_n}x{mm_n}", bench_matmul),
        (f"masked softmax {sm_n}x{sm_n} causal", bench_softmax),
        (f"pairwise cosine {pc_n} tokens, dim {pc_d}", bench_pairwise_cosine),
        (f"multihead attention n={at_n}, d={at_d}, h={heads}",
         bench_attention),
        (f"importance scores n={pr_n}, 3 iterations", bench_importance),
        (f"prefill sim {sim_frames}x{sim_per} tokens, {sim_layers} layers",
         bench_prefill),
    ]


def run_on_backend(fn, backend_name: str, kernels, repeats: int):
    saved = nm._K, nm.BACKEND
    nm._K, nm.BACKEND = kernels, backend_name
    try:
        best = float("inf")
        out = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
        return best, out
    finally:
        nm._K, nm.BACKEND = saved


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed runs per workload; best is reported")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="multiplier on workload sizes")
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not importable; nothing to compare "
              "(build it with: pip install -e . --no-build-isolation)")
        return 0

    workloads = make_workloads(args.scale, args.seed)
    name_w = max(len(n) for n, _ in workloads)
    header = (f"{'workload':<{name_w}}  {'python':>10}  {'compiled':>10}"
              f"  {'speedup':>8}  identical")
    print(header)
    print("-" * len(header))
    for name, fn in workloads:
        t_py, out_py = run_on_backend(fn, "python", backends["python"],
                                      args.repeats)
        t_c, out_c = run_on_backend(fn, "compiled", backends["compiled"],
                                    args.repeats)
        same = "yes" if out_py == out_c else "NO"
        print(f"{name:<{name_w}}  {t_py * 1e3:>8.2f}ms  {t_c * 1e3:>8.2f}ms"
              f"  {t_py / t_c:>7.1f}x  {same}")
        if same != "yes":
            print("ERROR: backends disagree bitwise on this workload")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
